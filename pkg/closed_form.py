"""
Exact analytical quantities: population loss, pretrained and task-optimal
weights, the Gaussian fourth-moment identity, covariance shift and the
eigenvalue characterisation of the pretrained weights.

Nothing here drops lower-order terms; asymptotic predictions live in theory.py.
"""

from dataclasses import dataclass

import numpy as np

from errors import DomainError, ShapeError, UnsupportedRegimeError
from linalg import DEFAULT_REL_TOL, as_matrix, diag_pseudoinverse
from model import CovarianceModel, TaskInstance

SYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class LossBreakdown:
    """Population loss split into its bias, noise-trace and noise-floor parts."""
    total: float
    bias_term: float
    noise_trace_term: float
    noise_floor: float

    @classmethod
    def from_terms(cls, bias_term, noise_trace_term, noise_floor):
        return cls(
            total=bias_term + noise_trace_term + noise_floor,
            bias_term=bias_term,
            noise_trace_term=noise_trace_term,
            noise_floor=noise_floor,
        )


def _check_problem(W, cov, task, n):
    if n < 1:
        raise ShapeError(f"Context length n must be >= 1, got {n}")
    if cov.d != task.d:
        raise ShapeError(f"Covariance model has d={cov.d} but task has d={task.d}")
    W = np.asarray(W, dtype=np.float64)
    if W.shape != (cov.d, cov.d):
        raise ShapeError(f"Attention weights must be {cov.d}x{cov.d}, got shape {W.shape}")
    return W


def population_loss(W, cov, task, n):
    """
    Expected squared error of the linear-attention readout on a fresh prompt.

    L(W) = βᵀ[Σ − nΣWΣ − nΣWᵀΣ + n(n+1)ΣWᵀΣWΣ + n·tr(WᵀΣWΣ)·Σ]β
           + σ²·n·tr(WᵀΣWΣ) + σ²

    with Σ = Σx and β the test-time task. Every loss the lab reports,
    including the inner expectation of each Monte-Carlo trial, goes through
    this function.

    Args:
        W: Attention weights (d x d)
        cov: CovarianceModel
        task: TaskInstance
        n: Context length

    Returns:
        LossBreakdown
    """
    W = _check_problem(W, cov, task, n)
    beta = task.beta
    if cov.features_identity:
        sigma_beta = beta
        projected = W @ beta
        weighted_sq = float(projected @ projected)
        trace_term = float(np.sum(W * W))
    else:
        sigma_x = cov.feature_matrix()
        sigma_beta = sigma_x @ beta
        projected = W @ sigma_beta
        weighted_sq = float(projected @ (sigma_x @ projected))
        trace_term = float(np.sum((sigma_x @ W) * (W @ sigma_x)))

    signal = float(beta @ sigma_beta)
    cross = float(sigma_beta @ (W @ sigma_beta))
    bias = signal - 2.0 * n * cross + n * (n + 1) * weighted_sq + n * trace_term * signal
    sigma_sq = task.sigma ** 2
    return LossBreakdown.from_terms(bias, sigma_sq * n * trace_term, sigma_sq)


# ============================================================================
# PRETRAINED AND OPTIMAL WEIGHTS
# ============================================================================

def pretrained_weights_isotropic(n, d, sigma=0.0):
    """W* = I/(n+d+1+σ²), the pretraining optimum for Σx = Σβ = I."""
    if n < 1 or d < 1:
        raise ShapeError(f"n and d must be >= 1, got n={n}, d={d}")
    return np.eye(d) / (n + d + 1 + sigma ** 2)


def pretrained_loss_isotropic(n, d, beta_norm_sq, sigma=0.0):
    """
    Closed-form loss of the isotropic W* on a task with ‖β‖² = beta_norm_sq.

    σ = 0 reduces to ‖β‖²(d+1)/(n+d+1).
    """
    s2 = sigma ** 2
    denom = n + d + 1 + s2
    bias = beta_norm_sq * ((d + 1 + s2) * denom - s2 * n) / denom ** 2
    return bias + s2 * n * d / denom ** 2 + s2


def pretrained_weights_general(cov, n, sigma=0.0):
    """
    Pretraining optimum for jointly diagonalisable (Σx, Σβ).

    In the whitened basis the weights are diagonal with entries
    pᵢ/((n+1)pᵢ + M), pᵢ = λxᵢ·λβᵢ and M = σ² + Σpᵢ. Mapping back through
    Σx^{-1/2} gives λβᵢ/((n+1)pᵢ + M) on non-degenerate directions; degenerate
    directions get 0 (the minimal-Frobenius solution).

    Raises:
        DomainError: If a direction has zero feature variance but non-zero task variance
    """
    if n < 1:
        raise ShapeError(f"Context length n must be >= 1, got {n}")
    fx = cov.feature_eigs
    fb = cov.task_eigs
    inv_fx = diag_pseudoinverse(fx)
    ill_posed = (inv_fx == 0) & (fb > DEFAULT_REL_TOL * max(fb.max(), 1.0))
    if np.any(ill_posed):
        raise DomainError(
            f"Directions {np.flatnonzero(ill_posed).tolist()} have zero feature variance "
            "but non-zero task variance"
        )
    power = fx * fb
    m_total = sigma ** 2 + float(np.sum(power))
    denom = (n + 1) * power + m_total
    whitened = np.divide(power, denom, out=np.zeros_like(power), where=denom > 0)
    diag = whitened * inv_fx
    return (cov.basis * diag) @ cov.basis.T


def task_optimal_weights(task, n):
    """
    Population-loss minimiser for a known task (Σx = I, σ = 0).

    W_opt = ββᵀ/((n+2)‖β‖²), reaching loss 2‖β‖²/(n+2).

    Raises:
        DomainError: If β = 0
        UnsupportedRegimeError: If the task is noisy
    """
    if task.sigma != 0:
        raise UnsupportedRegimeError("Task-optimal weights are only derived for noiseless tasks")
    norm_sq = task.beta_norm_sq
    if norm_sq == 0:
        raise DomainError("Task-optimal weights are undefined for beta = 0")
    return np.outer(task.beta, task.beta) / ((n + 2) * norm_sq)


# ============================================================================
# MOMENTS, SHIFT, EIGENVALUES
# ============================================================================

def moment_identity(cov_sigma, M, n):
    """
    E[(XᵀX) M (XᵀX)] for X with n i.i.d. N(0, Σ) rows.

    Returns n(n+1)·ΣMΣ + n·tr(MΣ)·Σ.

    Raises:
        DomainError: If M is not symmetric
    """
    sigma = as_matrix(cov_sigma, "Σ")
    M = as_matrix(M, "M")
    if sigma.shape != M.shape or sigma.shape[0] != sigma.shape[1]:
        raise ShapeError(f"Σ and M must be square of equal size, got {sigma.shape} and {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M))))
    if np.max(np.abs(M - M.T)) > SYMMETRY_TOL * scale:
        raise DomainError("Moment identity needs a symmetric M")
    return n * (n + 1) * (sigma @ M @ sigma) + n * float(np.trace(M @ sigma)) * sigma


def shifted_covariance(cov):
    """Covariance model seen after absorbing Σx: features I, tasks Σx^{1/2}ΣβΣx^{1/2}."""
    return CovarianceModel(cov.basis, np.ones(cov.d), cov.feature_eigs * cov.task_eigs)


def covariance_shift(W, cov, task):
    """
    Reparametrise a problem to identity feature covariance.

    W̄ = Σx^{1/2} W Σx^{1/2} and β̄ = Σx^{1/2} β leave the population loss unchanged.

    Raises:
        DomainError: If Σx is singular
    """
    W = _check_problem(W, cov, task, 1)
    fx = cov.feature_eigs
    if np.any(fx <= DEFAULT_REL_TOL * fx.max()):
        raise DomainError("Covariance shift needs a positive definite feature covariance")
    root = cov.feature_sqrt()
    return root @ W @ root, TaskInstance(root @ task.beta, task.sigma)


def whitened_weight_eigs(W, cov):
    """Eigenvalues of Σx^{1/2} W Σx^{1/2} (symmetrised), ascending."""
    root = cov.feature_sqrt()
    whitened = root @ np.asarray(W, dtype=np.float64) @ root
    return np.linalg.eigvalsh((whitened + whitened.T) / 2)
