"""
Monte-Carlo engine for the test-time loss, plus the sampling oracles that
check the closed forms (fourth moments, Gaussian coupling, gradients).

Each trial draws one test-time prompt from its own random stream
make_rng(base_seed, trial_index), applies TTT and scores the updated weights
with the closed-form population loss. Only the outer expectation over
prompts is sampled.
"""

import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Optional

import numpy as np

from closed_form import (
    covariance_shift,
    moment_identity,
    population_loss,
    pretrained_weights_general,
    shifted_covariance,
)
from errors import DomainError, ShapeError, UnsupportedRegimeError
from linalg import as_matrix, make_rng, random_gaussian_matrix
from model import (
    CovarianceModel,
    StepSchedule,
    TaskInstance,
    empirical_train_loss,
    sample_context_vector,
    sample_query_summary,
    train_loss_gradient,
    ttt_step_summary,
)
from theory import predict_general_cov, predict_iso_pretrained, predict_zero_init

logger = logging.getLogger(__name__)

INIT_PRETRAINED = 'pretrained'
INIT_ZERO = 'zero'
INIT_EXPLICIT = 'explicit'
INIT_CHOICES = (INIT_PRETRAINED, INIT_ZERO, INIT_EXPLICIT)

POLICY_THEORY_ISO = 'theory_iso'
POLICY_THEORY_ZERO = 'theory_zero'
POLICY_THEORY_GENERAL = 'theory_general'
POLICY_MANUAL = 'manual'
POLICY_CHOICES = (POLICY_THEORY_ISO, POLICY_THEORY_ZERO, POLICY_THEORY_GENERAL, POLICY_MANUAL)

DEFAULT_FD_EPSILON = 1e-5
ORACLE_CHUNK = 50_000


@dataclass(frozen=True)
class TrialConfig:
    """Everything one Monte-Carlo estimate of the test-time loss depends on."""
    cov: CovarianceModel
    task: TaskInstance
    n: int
    k: int
    init: str = INIT_PRETRAINED
    eta_policy: str = POLICY_THEORY_ISO
    eta: float = 0.0
    steps: int = 1
    decay: float = 1.0
    trials: int = 2000
    base_seed: int = 0
    weights: Optional[np.ndarray] = None
    whiten: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise DomainError(f"trials must be >= 1, got {self.trials}")
        if self.n < 1 or self.k < 0:
            raise ShapeError(f"Need n >= 1 and k >= 0, got n={self.n}, k={self.k}")
        if self.cov.d != self.task.d:
            raise ShapeError(f"Covariance model has d={self.cov.d} but task has d={self.task.d}")
        if self.init not in INIT_CHOICES:
            raise DomainError(f"Unknown init '{self.init}', expected one of {INIT_CHOICES}")
        if self.eta_policy not in POLICY_CHOICES:
            raise DomainError(f"Unknown eta_policy '{self.eta_policy}', expected one of {POLICY_CHOICES}")
        if self.init == INIT_EXPLICIT:
            if self.weights is None:
                raise DomainError("init = explicit needs weights")
            w = np.asarray(self.weights, dtype=np.float64)
            if w.shape != (self.d, self.d):
                raise ShapeError(f"Explicit weights must be {self.d}x{self.d}, got {w.shape}")
        if self.eta_policy == POLICY_MANUAL and not self.eta >= 0:
            raise DomainError(f"Manual step size must be >= 0, got {self.eta!r}")
        if self.steps < 1:
            raise DomainError(f"steps must be >= 1, got {self.steps}")
        if not 0 < self.decay <= 1:
            raise DomainError(f"decay must lie in (0, 1], got {self.decay!r}")

    @property
    def d(self):
        return self.cov.d


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    std_error: float
    trials: int

    @classmethod
    def from_samples(cls, samples):
        """
        Mean and standard error with order-independent compensated sums.

        The mean is taken around the smallest sample, so identical samples
        give that sample back exactly and a zero standard error.
        """
        samples = [float(s) for s in samples]
        count = len(samples)
        if count == 0:
            raise DomainError("Cannot aggregate zero samples")
        anchor = min(samples)
        mean = anchor + math.fsum(s - anchor for s in samples) / count
        if count == 1:
            return cls(mean, 0.0, 1)
        variance = math.fsum((s - mean) ** 2 for s in samples) / (count - 1)
        return cls(mean, math.sqrt(variance / count), count)


def resolve_workers(threads):
    """0 or None means one worker per CPU."""
    if not threads:
        return os.cpu_count() or 1
    return max(1, int(threads))


# ============================================================================
# INITIALISATION AND STEP-SIZE POLICY
# ============================================================================

def initial_weights(cfg):
    if cfg.init == INIT_ZERO:
        return np.zeros((cfg.d, cfg.d))
    if cfg.init == INIT_EXPLICIT:
        return np.array(cfg.weights, dtype=np.float64)
    return pretrained_weights_general(cfg.cov, cfg.n, cfg.task.sigma)


@dataclass(frozen=True)
class WorkingProblem:
    """Covariance model, task and initial weights in the coordinates TTT steps in."""
    cov: CovarianceModel
    task: TaskInstance
    w_init: np.ndarray


def working_problem(cfg):
    """
    The problem the engine steps on.

    With whiten set and Σx ≠ I the covariance shift maps everything to
    identity features (W̄ = Σx^{1/2}WΣx^{1/2}, β̄ = Σx^{1/2}β); the population
    loss is unchanged by the shift, so losses stay comparable.
    """
    w_init = initial_weights(cfg)
    if not cfg.whiten or cfg.cov.features_identity:
        return WorkingProblem(cfg.cov, cfg.task, w_init)
    w_bar, task_bar = covariance_shift(w_init, cfg.cov, cfg.task)
    return WorkingProblem(shifted_covariance(cfg.cov), task_bar, w_bar)


def _is_isotropic(cov):
    te = cov.task_eigs
    return cov.features_identity and te[0] > 0 and bool(np.all(te == te[0]))


def _theory_problem(cfg):
    problem = working_problem(cfg)
    if not problem.cov.features_identity:
        raise UnsupportedRegimeError(
            "Theory step sizes assume identity feature covariance; "
            "set whiten = true to take the step in whitened coordinates"
        )
    return problem


def run_theory(cfg):
    """
    Theory report matching the config's initialisation.

    Zero init uses the (noisy) zero-init closed form, pretrained init on an
    isotropic model uses the isotropic prediction, everything else the
    general-covariance prediction. Every formula is evaluated on the working
    problem, so a whitened config reports with ‖β̄‖² = βᵀΣxβ.

    Raises:
        UnsupportedRegimeError: If Σx ≠ I without whitening, or the regime's
            formula does not cover the config
    """
    problem = _theory_problem(cfg)
    d, n, k = cfg.d, cfg.n, cfg.k
    if cfg.init == INIT_ZERO:
        return predict_zero_init(n, d, k, problem.task.beta_norm_sq, problem.task.sigma)
    if cfg.init == INIT_PRETRAINED and _is_isotropic(problem.cov):
        return predict_iso_pretrained(n, d, k, problem.task.beta_norm_sq, problem.task.sigma)
    return predict_general_cov(problem.w_init, problem.cov, problem.task, n, d, k)


def resolve_eta(cfg, problem):
    """
    Step size for the config's policy, in the working problem's coordinates.

    Raises:
        UnsupportedRegimeError: If the policy does not match the init or covariance model
    """
    policy = cfg.eta_policy
    if policy == POLICY_MANUAL:
        return float(cfg.eta)
    if not problem.cov.features_identity:
        raise UnsupportedRegimeError(
            f"{policy} assumes identity feature covariance; set whiten = true or use a manual step"
        )
    if policy == POLICY_THEORY_ISO:
        if cfg.init != INIT_PRETRAINED or not _is_isotropic(problem.cov):
            raise UnsupportedRegimeError(
                "theory_iso needs pretrained init with Σx = I and isotropic Σβ"
            )
        return predict_iso_pretrained(cfg.n, cfg.d, cfg.k, problem.task.beta_norm_sq, problem.task.sigma).eta_star
    if policy == POLICY_THEORY_ZERO:
        if cfg.init != INIT_ZERO:
            raise UnsupportedRegimeError(f"theory_zero needs init = zero, got init = {cfg.init}")
        return predict_zero_init(cfg.n, cfg.d, cfg.k, problem.task.beta_norm_sq, problem.task.sigma).eta_star
    return predict_general_cov(problem.w_init, problem.cov, problem.task, cfg.n, cfg.d, cfg.k).eta_star


def step_sizes(cfg, eta0):
    """The per-step step sizes: eta0·decayᵗ for t < steps."""
    if eta0 == 0:
        return [0.0] * cfg.steps
    return StepSchedule(eta0, cfg.decay, cfg.steps).etas()


# ============================================================================
# TRIAL ENGINE
# ============================================================================

def run_trial(cfg, problem, etas, trial_index):
    """
    One trial: draw S_TT, apply every step, score the weights after each.

    Returns:
        list of population losses, one per step
    """
    rng = make_rng(cfg.base_seed, trial_index)
    u = sample_context_vector(rng, problem.cov, problem.task, cfg.n)
    summary = sample_query_summary(rng, problem.cov, problem.task, cfg.k)
    W = problem.w_init
    losses = []
    for eta in etas:
        W = ttt_step_summary(W, u, summary, eta)
        losses.append(population_loss(W, problem.cov, problem.task, cfg.n).total)
    return losses


def _run_trials(cfg, threads):
    problem = working_problem(cfg)
    eta0 = resolve_eta(cfg, problem)
    etas = step_sizes(cfg, eta0)
    workers = resolve_workers(threads)

    logger.info(
        "Running %d trials (n=%d, d=%d, k=%d, init=%s, eta0=%.6g, steps=%d, whiten=%s) on %d worker(s)",
        cfg.trials, cfg.n, cfg.d, cfg.k, cfg.init, eta0, cfg.steps, cfg.whiten, workers,
    )
    start_time = time.time()
    results = [None] * cfg.trials

    if workers == 1:
        for t in range(cfg.trials):
            results[t] = run_trial(cfg, problem, etas, t)
    else:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            future_to_trial = {
                executor.submit(run_trial, cfg, problem, etas, t): t
                for t in range(cfg.trials)
            }
            for future in as_completed(future_to_trial):
                results[future_to_trial[future]] = future.result()

    logger.debug("Trials finished in %.2fs", time.time() - start_time)
    return problem, results


def estimate_ttt_loss(cfg, threads=1):
    """
    Monte-Carlo estimate of the expected test-time loss after TTT.

    Bit-identical for equal configs whatever the number of worker threads.
    """
    _, results = _run_trials(cfg, threads)
    return MCEstimate.from_samples(losses[-1] for losses in results)


def estimate_ttt_trajectory(cfg, threads=1):
    """
    Estimates after 0, 1, ..., steps updates, all from the same sampled prompts.

    Entry 0 is the exact loss of the initial weights (zero standard error).
    """
    problem, results = _run_trials(cfg, threads)
    initial = population_loss(problem.w_init, problem.cov, problem.task, cfg.n).total
    trajectory = [MCEstimate(initial, 0.0, cfg.trials)]
    for step in range(cfg.steps):
        trajectory.append(MCEstimate.from_samples(losses[step] for losses in results))
    return trajectory


# ============================================================================
# ORACLES
# ============================================================================

def estimate_population_loss(rng, W, cov, task, n, prompts):
    """
    Nested Monte-Carlo of the population loss: fresh prompts and queries,
    squared error of the linear-attention prediction.
    """
    W = as_matrix(W, "W")
    d = cov.d
    factor = cov.factor()
    errors_sq = []
    remaining = prompts
    while remaining > 0:
        batch = min(remaining, ORACLE_CHUNK)
        X = random_gaussian_matrix(rng, batch * (n + 1), d, factor).reshape(batch, n + 1, d)
        y = X @ task.beta + task.sigma * rng.standard_normal((batch, n + 1))
        u = np.einsum('bnd,bn->bd', X[:, :n, :], y[:, :n])
        pred = np.einsum('bd,bd->b', X[:, n, :], u @ W.T)
        errors_sq.append((y[:, n] - pred) ** 2)
        remaining -= batch
    return MCEstimate.from_samples(np.concatenate(errors_sq))


@dataclass(frozen=True)
class GaussianCouplingDraws:
    """Per-sample q = XᵀXw/n, its Gaussian part g and residual e = q − w − g."""
    q: np.ndarray
    g: np.ndarray
    e: np.ndarray


def gaussian_coupling_draws(rng, n, d, w_unit, samples):
    """
    Couple q = XᵀXw/n with w + g + e where g ~ N(0, I/n) exactly.

    With h = Xw, P = I − wwᵀ and an independent v ~ N(0, I_n), the matrix
    X′ᵀ = PXᵀ + wvᵀ has i.i.d. standard entries independent of h, so
    g = X′ᵀh/(√n·‖h‖) is exactly N(0, I/n).

    Raises:
        DomainError: If w_unit is not a unit vector
    """
    w = np.asarray(w_unit, dtype=np.float64)
    if w.shape != (d,):
        raise ShapeError(f"w must have shape ({d},), got {w.shape}")
    if abs(float(np.linalg.norm(w)) - 1.0) > 1e-10:
        raise DomainError(f"w must be a unit vector, got norm {np.linalg.norm(w)!r}")
    if n < 1 or d < 1 or samples < 1:
        raise ShapeError(f"Need n, d, samples >= 1, got {n}, {d}, {samples}")

    q = np.empty((samples, d))
    g = np.empty((samples, d))
    for s in range(samples):
        X = rng.standard_normal((n, d))
        v = rng.standard_normal(n)
        h = X @ w
        xth = X.T @ h
        projected = xth - w * (w @ xth)
        x_prime_h = projected + w * (v @ h)
        q[s] = xth / n
        g[s] = x_prime_h / (math.sqrt(n) * np.linalg.norm(h))
    return GaussianCouplingDraws(q=q, g=g, e=q - w - g)


@dataclass(frozen=True)
class GaussianResidualStats:
    """
    Summary of one coupling run.

    q_along_w_z is (wᵀq̄ − 1) in standard errors. q_offset_z standardises
    n·samples·‖q̄ − w‖², whose mean is d + 1 and variance 2(d + 3).
    """
    residual_sq: MCEstimate
    q_along_w_z: float
    q_offset_z: float
    draws: GaussianCouplingDraws


def gaussian_residual_stats(rng, n, d, w_unit, samples):
    """
    E‖e‖² (bounded by 9(n+d)/n²) and how closely the mean of q recovers w.

    Raises:
        DomainError: If w_unit is not a unit vector, or samples < 2
    """
    if samples < 2:
        raise DomainError(f"Need at least 2 samples for a standard error, got {samples}")
    draws = gaussian_coupling_draws(rng, n, d, w_unit, samples)
    w = np.asarray(w_unit, dtype=np.float64)
    along = draws.q @ w
    along_stderr = float(along.std(ddof=1) / math.sqrt(samples))
    along_z = float((along.mean() - 1.0) / along_stderr) if along_stderr > 0 else 0.0
    offset = n * samples * float(np.sum((draws.q.mean(axis=0) - w) ** 2))
    return GaussianResidualStats(
        residual_sq=MCEstimate.from_samples(np.sum(draws.e ** 2, axis=1)),
        q_along_w_z=along_z,
        q_offset_z=(offset - (d + 1)) / math.sqrt(2 * (d + 3)),
        draws=draws,
    )


def gaussian_residual_bound(n, d):
    return 9 * (n + d) / n ** 2


def verify_moment_identity(rng, cov_sigma, M, n, samples):
    """
    Compare the MC average of (XᵀX)M(XᵀX) against the closed form.

    Returns:
        max over entries of |MC average − closed form| in units of that
        entry's MC standard error
    """
    expected = moment_identity(cov_sigma, M, n)
    sigma = as_matrix(cov_sigma, "Σ")
    M = as_matrix(M, "M")
    d = sigma.shape[0]
    eigs, vecs = np.linalg.eigh((sigma + sigma.T) / 2)
    factor = vecs * np.sqrt(np.clip(eigs, 0.0, None))

    total = np.zeros((d, d))
    total_sq = np.zeros((d, d))
    remaining = samples
    while remaining > 0:
        batch = min(remaining, ORACLE_CHUNK)
        X = random_gaussian_matrix(rng, batch * n, d, factor).reshape(batch, n, d)
        gram = np.einsum('bni,bnj->bij', X, X)
        product = gram @ M @ gram
        total += product.sum(axis=0)
        total_sq += (product ** 2).sum(axis=0)
        remaining -= batch

    mean = total / samples
    variance = np.clip(total_sq / samples - mean ** 2, 0.0, None) * samples / max(samples - 1, 1)
    std_error = np.sqrt(variance / samples)
    diff = np.abs(mean - expected)
    scaled = np.divide(diff, std_error, out=np.zeros_like(diff), where=std_error > 0)
    scaled[(std_error == 0) & (diff > 0)] = np.inf
    return float(scaled.max())


def finite_diff_gradient(W, test_set, epsilon=DEFAULT_FD_EPSILON):
    """Central-difference gradient of empirical_train_loss in every entry of W."""
    if not 1e-8 <= epsilon <= 1e-3:
        raise DomainError(f"epsilon must lie in [1e-8, 1e-3], got {epsilon!r}")
    W = np.array(W, dtype=np.float64)
    grad = np.zeros_like(W)
    if test_set.k == 0:
        return grad
    for idx in np.ndindex(*W.shape):
        original = W[idx]
        W[idx] = original + epsilon
        upper = empirical_train_loss(W, test_set)
        W[idx] = original - epsilon
        lower = empirical_train_loss(W, test_set)
        W[idx] = original
        grad[idx] = (upper - lower) / (2 * epsilon)
    return grad


def gradient_check(W, test_set, epsilon=DEFAULT_FD_EPSILON):
    """Max absolute gap between the analytic and finite-difference gradients."""
    analytic = train_loss_gradient(W, test_set)
    numeric = finite_diff_gradient(W, test_set, epsilon)
    return float(np.max(np.abs(analytic - numeric)))


def rank_one_residual(delta):
    """Second singular value over the first (0 for a rank <= 1 matrix)."""
    singular = np.linalg.svd(np.asarray(delta, dtype=np.float64), compute_uv=False)
    if singular.size < 2 or singular[0] == 0:
        return 0.0
    return float(singular[1] / singular[0])
