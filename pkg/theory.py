"""
Asymptotic predictions for single-step TTT.

Covers the alignment quantities A and B, optimal step sizes, predicted loss
improvements, the non-monotonicity threshold in α = n/d and the phase
transition in γ = k/d between pretrained and zero initialisation.

Counts (n, d, k) may be fractional here, so continuous sweeps and bisection
over γ can call the predictors directly.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from closed_form import population_loss
from errors import DomainError, ShapeError, UnsupportedRegimeError

REGIME_ISO_PRETRAINED = 'iso_pretrained'
REGIME_ZERO_INIT = 'zero_init'
REGIME_GENERAL_COV = 'general_cov'

VARIANT_REFINED = 'refined'
VARIANT_LEADING = 'leading'

# Relative off-diagonal mass tolerated when W must be diagonal in the Q basis
DIAGONAL_TOL = 1e-10


@dataclass(frozen=True)
class AlignmentQuantities:
    """
    A = β̃ᵀ(I − nΛ)²β̃ (misalignment) and B = n‖β̃‖²·tr(Λ²) (signal power).

    β̃ = QᵀΣx^{1/2}β and Λ holds the eigenvalues of Σx^{1/2}WΣx^{1/2}.
    """
    A: float
    B: float
    beta_tilde_norm_sq: float

    @property
    def c1(self):
        return self.A / self.beta_tilde_norm_sq

    @property
    def c2(self):
        return self.B / self.beta_tilde_norm_sq


@dataclass(frozen=True)
class TheoryReport:
    eta_star: float
    initial_loss: float
    predicted_improvement: float
    predicted_final_loss: float
    regime_tag: str

    @classmethod
    def build(cls, eta_star, initial_loss, predicted_improvement, regime_tag):
        return cls(
            eta_star=eta_star,
            initial_loss=initial_loss,
            predicted_improvement=predicted_improvement,
            predicted_final_loss=initial_loss - predicted_improvement,
            regime_tag=regime_tag,
        )

    def to_dict(self):
        return asdict(self)


def _check_counts(n, d, k):
    if n < 1 or d < 1:
        raise ShapeError(f"n and d must be >= 1, got n={n}, d={d}")
    if k < 0:
        raise ShapeError(f"k must be >= 0, got {k}")


# ============================================================================
# ALIGNMENT
# ============================================================================

def alignment_quantities(W, cov, task, n):
    """
    Compute A and B for weights that share the covariance eigenbasis.

    Args:
        W: Attention weights, diagonal in the basis Q after whitening
        cov: CovarianceModel
        task: TaskInstance (β_TT)
        n: Context length

    Returns:
        AlignmentQuantities

    Raises:
        DomainError: If W is not diagonal in the Q basis, or an eigenvalue of
            Σx^{1/2}WΣx^{1/2} falls outside [0, 1/(n+1)]
    """
    W = np.asarray(W, dtype=np.float64)
    if W.shape != (cov.d, cov.d) or task.d != cov.d:
        raise ShapeError(f"Weights {W.shape} and task d={task.d} must match d={cov.d}")
    root = cov.feature_sqrt()
    rotated = cov.basis.T @ (root @ W @ root) @ cov.basis
    lam = np.diag(rotated).copy()
    off_diag = rotated - np.diag(lam)
    scale = max(float(np.linalg.norm(rotated)), np.finfo(float).tiny)
    if np.linalg.norm(off_diag) > DIAGONAL_TOL * scale:
        raise DomainError("Weights are not diagonal in the covariance eigenbasis")
    upper = 1.0 / (n + 1)
    slack = 1e-12 * max(upper, float(np.max(np.abs(lam))))
    if np.any(lam < -slack) or np.any(lam > upper + slack):
        raise DomainError(
            f"Whitened weight eigenvalues must lie in [0, 1/(n+1)] = [0, {upper!r}], "
            f"got range [{lam.min()!r}, {lam.max()!r}]"
        )
    beta_tilde = cov.basis.T @ (root @ task.beta)
    beta_sq = beta_tilde ** 2
    norm_sq = float(beta_sq.sum())
    misalignment = float(np.sum(beta_sq * (1.0 - n * lam) ** 2))
    signal_power = n * norm_sq * float(np.sum(lam ** 2))
    return AlignmentQuantities(misalignment, signal_power, norm_sq)


# ============================================================================
# STEP SIZE AND IMPROVEMENT PREDICTIONS
# ============================================================================

def predict_iso_pretrained(n, d, k, beta_norm_sq, sigma=0.0, variant=VARIANT_REFINED):
    """
    Single-step TTT from the isotropic pretrained W* = I/(n+d+1), noiseless.

    Leading order:
        η* = d / (2(k+d)·n²·(n+d)·‖β‖²)
        improvement = (k/(k+d))·(d/(n+d))³·‖β‖²
    Refined (the default):
        η* = d / (2(k+d+1)·(n²+d)·(n+d)·‖β‖²)
        improvement = (k/(k+d+1))·d³ / ((n+d+1)²·(n+d)·(1+d/n²))·‖β‖²

    The initial loss is the exact ‖β‖²(d+1)/(n+d+1) in both variants.

    Raises:
        UnsupportedRegimeError: If sigma != 0
    """
    if sigma != 0:
        raise UnsupportedRegimeError(
            f"Isotropic pretrained predictions are only derived for sigma = 0, got sigma={sigma!r}"
        )
    _check_counts(n, d, k)
    if beta_norm_sq <= 0:
        raise DomainError(f"beta_norm_sq must be > 0, got {beta_norm_sq!r}")

    if variant == VARIANT_LEADING:
        eta = d / (2 * (k + d) * n ** 2 * (n + d) * beta_norm_sq)
        improvement = (k / (k + d)) * (d / (n + d)) ** 3 * beta_norm_sq
    elif variant == VARIANT_REFINED:
        eta = d / (2 * (k + d + 1) * (n ** 2 + d) * (n + d) * beta_norm_sq)
        improvement = (
            (k / (k + d + 1)) * d ** 3
            / ((n + d + 1) ** 2 * (n + d) * (1 + d / n ** 2))
            * beta_norm_sq
        )
    else:
        raise ValueError(f"Unknown variant '{variant}'")

    initial = beta_norm_sq * (d + 1) / (n + d + 1)
    return TheoryReport.build(eta, initial, improvement, REGIME_ISO_PRETRAINED)


def predict_zero_init(n, d, k, beta_norm_sq, sigma=0.0):
    """
    Single-step TTT from W = 0, with label noise of std sigma.

    With P = σ²d + (k+d+1)‖β‖² and
         Q = σ⁴d + ‖β‖⁴(n²+4n+3+d) + 2σ²(n+d+1)‖β‖²:
        η* = ‖β‖⁴ / (2PQ)
        improvement = k·n²·‖β‖⁸ / (PQ)
    σ = 0 gives η* = 1/(2(k+d+1)(n²+4n+3+d)‖β‖²) and
    improvement = (k/(k+d+1))·(n²/(n²+4n+3+d))·‖β‖².
    """
    _check_counts(n, d, k)
    if beta_norm_sq < 0 or sigma < 0:
        raise DomainError(f"beta_norm_sq and sigma must be >= 0, got {beta_norm_sq!r}, {sigma!r}")
    s2 = sigma ** 2
    b = beta_norm_sq
    if b == 0 and s2 == 0:
        raise DomainError("Zero-init prediction is undefined for beta = 0 without noise")

    p_term = s2 * d + (k + d + 1) * b
    q_term = s2 ** 2 * d + b ** 2 * (n ** 2 + 4 * n + 3 + d) + 2 * s2 * (n + d + 1) * b
    eta = b ** 2 / (2 * p_term * q_term)
    improvement = k * n ** 2 * b ** 4 / (p_term * q_term)
    return TheoryReport.build(eta, b + s2, improvement, REGIME_ZERO_INIT)


def zero_init_limit_loss(n, d, beta_norm_sq):
    """Noiseless zero-init loss after one optimal step as k/d → ∞."""
    return (4 * n + d + 3) / (n ** 2 + 4 * n + 3 + d) * beta_norm_sq


def predict_general_cov(W, cov, task, n, d, k, variant=VARIANT_REFINED):
    """
    Single-step TTT from weights diagonal in the covariance eigenbasis.

    The step is taken in whitened coordinates W̄ = Σx^{1/2}WΣx^{1/2}, which
    is the plain TTT step whenever Σx = I.

    Leading order:
        η* = A / (2(k+d)·n²·‖β̃‖²·(A+B))
        improvement = (k/(k+d))·A²/(A+B)
        initial loss = A + B
    Refined (the default):
        η* = A / (2(k+d+1)·n²·‖β̃‖²·(B + (1+d/n²)A))
        improvement = (k/(k+d+1))·A²/(B + (1+d/n²)A)
        initial loss = exact population loss of W

    Raises:
        UnsupportedRegimeError: For noisy tasks
        DomainError: Propagated from alignment_quantities, or β̃ = 0
    """
    if task.sigma != 0:
        raise UnsupportedRegimeError(
            f"General-covariance predictions are only derived for sigma = 0, got sigma={task.sigma!r}"
        )
    if d != cov.d:
        raise ShapeError(f"d={d} does not match the covariance model (d={cov.d})")
    _check_counts(n, d, k)
    aq = alignment_quantities(W, cov, task, n)
    if aq.beta_tilde_norm_sq == 0 or aq.A + aq.B == 0:
        raise DomainError("General-covariance prediction needs a non-zero whitened task")

    if variant == VARIANT_LEADING:
        total = aq.A + aq.B
        eta = aq.A / (2 * (k + d) * n ** 2 * aq.beta_tilde_norm_sq * total)
        improvement = (k / (k + d)) * aq.A ** 2 / total
        initial = total
    elif variant == VARIANT_REFINED:
        denom = aq.B + (1 + d / n ** 2) * aq.A
        eta = aq.A / (2 * (k + d + 1) * n ** 2 * aq.beta_tilde_norm_sq * denom)
        improvement = (k / (k + d + 1)) * aq.A ** 2 / denom
        initial = population_loss(W, cov, task, n).total
    else:
        raise ValueError(f"Unknown variant '{variant}'")
    return TheoryReport.build(eta, initial, improvement, REGIME_GENERAL_COV)


# ============================================================================
# THRESHOLDS
# ============================================================================

def nonmonotonic_threshold(gamma):
    """
    α at which the pretrained single-step loss peaks, or None.

    The loss is non-monotonic in α only when γ > 1/2, peaking at
    α* = √(3γ/(γ+1)) − 1.
    """
    if gamma <= 0:
        raise DomainError(f"gamma must be > 0, got {gamma!r}")
    if gamma <= 0.5:
        return None
    return math.sqrt(3 * gamma / (gamma + 1)) - 1


def phase_transition_iso(alpha):
    """γ* = (α+1)²/(α+2); below it the pretrained initialisation wins."""
    if alpha <= 0:
        raise DomainError(f"alpha must be > 0, got {alpha!r}")
    return (alpha + 1) ** 2 / (alpha + 2)


def phase_transition_general(c1, c2):
    """
    γ* = ((c₁+c₂) − (c₁+c₂)²) / (c₂(2c₁+c₂)) with c₁ = A/‖β̃‖², c₂ = B/‖β̃‖².

    A negative value means zero initialisation is preferable for every γ.
    """
    if c1 < 0 or c2 < 0:
        raise DomainError(f"c1 and c2 must be >= 0, got {c1!r}, {c2!r}")
    if c2 == 0:
        raise DomainError("Phase transition is undefined for c2 = 0")
    total = c1 + c2
    return (total - total ** 2) / (c2 * (2 * c1 + c2))
