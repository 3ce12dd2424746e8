"""
Verification suites: sampling oracles and invariant sweeps over the closed
forms. Each suite returns a SuiteResult; the CLI turns failures into a
non-zero exit.
"""

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from closed_form import (
    covariance_shift,
    population_loss,
    pretrained_weights_general,
    shifted_covariance,
    whitened_weight_eigs,
)
from linalg import make_rng
from model import CovarianceModel, TaskInstance, TestTimeSet, ttt_step
from montecarlo import (
    gaussian_residual_bound,
    gaussian_residual_stats,
    gradient_check,
    rank_one_residual,
    verify_moment_identity,
)

logger = logging.getLogger(__name__)

MOMENT_SAMPLES = 1_000_000
MOMENT_TOLERANCE = 5.0
GRADIENT_TOLERANCE = 1e-6
RANK_TOLERANCE = 1e-10
SHIFT_TOLERANCE = 1e-10
EIGEN_SLACK = 1e-12
GAUSSIAN_SAMPLES = 10_000
GAUSSIAN_SIZES = ((100, 50), (400, 200))


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool


@dataclass
class SuiteResult:
    suite: str
    checks: list = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def add(self, name, value, threshold, passed=None):
        if passed is None:
            passed = bool(value <= threshold)
        self.checks.append(Check(name, float(value), float(threshold), bool(passed)))

    def to_dict(self):
        return {
            'suite': self.suite,
            'passed': self.passed,
            'elapsed': self.elapsed,
            'checks': [asdict(c) for c in self.checks],
        }


# ============================================================================
# SUITES
# ============================================================================

def verify_moments(seed, samples=MOMENT_SAMPLES):
    """MC average of (XᵀX)M(XᵀX) against n(n+1)ΣMΣ + n·tr(MΣ)Σ."""
    result = SuiteResult('moments')
    rng = make_rng(seed, 1)
    cases = [
        ("identity d=2 n=3", np.eye(2), np.eye(2), 3),
        ("e1e1T d=2 n=4", np.array([[1.5, 0.3], [0.3, 0.8]]), np.array([[1.0, 0.0], [0.0, 0.0]]), 4),
        ("wick n=1 d=3", np.diag([1.0, 0.5, 2.0]), np.array([[1.0, 0.2, 0.0], [0.2, 0.5, 0.1], [0.0, 0.1, 0.3]]), 1),
    ]
    spectrum = CovarianceModel.random(rng, 4)
    sym = rng.standard_normal((4, 4))
    cases.append(("random d=4 n=6", spectrum.feature_matrix(), (sym + sym.T) / 2, 6))
    for name, sigma, M, n in cases:
        score = verify_moment_identity(rng, sigma, M, n, samples)
        result.add(name, score, MOMENT_TOLERANCE)
    return result


def verify_gradients(seed, instances=20):
    """Analytic TTT gradient against central differences, plus the rank-1 structure of the update."""
    result = SuiteResult('gradients')
    rng = make_rng(seed, 2)
    worst_gap, worst_rank = 0.0, 0.0
    for _ in range(instances):
        d = int(rng.integers(1, 6))
        n = int(rng.integers(1, 6))
        k = int(rng.integers(1, 4))
        test_set = random_unit_box_set(rng, d, n, k)
        W = rng.uniform(-1.0, 1.0, (d, d))
        worst_gap = max(worst_gap, gradient_check(W, test_set))
        worst_rank = max(worst_rank, rank_one_residual(ttt_step(W, test_set, 0.01) - W))
    result.add("max |analytic - finite difference|", worst_gap, GRADIENT_TOLERANCE)
    result.add("max second/first singular value", worst_rank, RANK_TOLERANCE)
    return result


def random_unit_box_set(rng, d, n, k):
    """Small TestTimeSet with every entry uniform in [-1, 1]."""
    return TestTimeSet(
        rng.uniform(-1.0, 1.0, (n, d)),
        rng.uniform(-1.0, 1.0, n),
        rng.uniform(-1.0, 1.0, (k, d)),
        rng.uniform(-1.0, 1.0, k),
    )


def verify_shift(seed, instances=100):
    """Covariance shift leaves the population loss unchanged."""
    result = SuiteResult('shift')
    rng = make_rng(seed, 3)
    worst = 0.0
    for _ in range(instances):
        d = int(rng.integers(1, 7))
        n = int(rng.integers(1, 20))
        cov = CovarianceModel.random(rng, d)
        task = TaskInstance(rng.standard_normal(d), float(rng.choice([0.0, 0.3])))
        W = rng.standard_normal((d, d)) / (n + d)
        W_bar, task_bar = covariance_shift(W, cov, task)
        original = population_loss(W, cov, task, n).total
        shifted = population_loss(W_bar, shifted_covariance(cov), task_bar, n).total
        worst = max(worst, abs(original - shifted) / abs(original))
    result.add("max relative loss gap", worst, SHIFT_TOLERANCE)
    return result


def verify_eigs(seed, models=50):
    """Whitened pretrained weights have every eigenvalue in [0, 1/(n+1)]."""
    result = SuiteResult('eigs')
    rng = make_rng(seed, 4)
    violations = 0
    worst_ratio = 0.0
    for _ in range(models):
        d = int(rng.integers(1, 16))
        n = int(rng.integers(1, 60))
        sigma = float(rng.choice([0.0, 0.5]))
        cov = CovarianceModel.random(rng, d, zero_task_fraction=0.3)
        eigs = whitened_weight_eigs(pretrained_weights_general(cov, n, sigma), cov)
        upper = 1.0 / (n + 1)
        if eigs.min() < -EIGEN_SLACK or eigs.max() > upper + EIGEN_SLACK:
            violations += 1
        worst_ratio = max(worst_ratio, eigs.max() * (n + 1))
    result.add("models outside [0, 1/(n+1)]", violations, 0)
    result.add("max eigenvalue x (n+1)", worst_ratio, 1.0 + EIGEN_SLACK)
    return result


def verify_gaussian_approx(seed, samples=GAUSSIAN_SAMPLES, sizes=GAUSSIAN_SIZES):
    """Residual of the Gaussian coupling stays under 9(n+d)/n²; q averages to w; g has covariance I/n."""
    result = SuiteResult('gaussian_approx')
    rng = make_rng(seed, 5)
    for n, d in sizes:
        w = rng.standard_normal(d)
        w /= np.linalg.norm(w)
        stats = gaussian_residual_stats(rng, n, d, w, samples)
        residual = stats.residual_sq
        result.add(f"E|e|^2 (n={n}, d={d})", residual.mean, gaussian_residual_bound(n, d) + 3 * residual.std_error)
        result.add(f"q mean along w, stderr units (n={n}, d={d})", abs(stats.q_along_w_z), 3.0)
        result.add(f"q mean offset from w, sd units (n={n}, d={d})", stats.q_offset_z, 3.0)

        # n·g_i² has mean 1 and variance 2; n·g_i·g_j has mean 0 and variance 1
        g = stats.draws.g
        scaled_sq = n * g ** 2
        diag_mean = float(scaled_sq.mean())
        diag_stderr = float(np.sqrt(2.0 / (samples * d)))
        result.add(f"g covariance diagonal x n (n={n}, d={d})", abs(diag_mean - 1.0), 3 * diag_stderr)
        if d > 1:
            cross = n * g[:, :-1] * g[:, 1:]
            cross_mean = float(cross.mean())
            cross_stderr = float(np.sqrt(1.0 / (samples * (d - 1))))
            result.add(f"g covariance off-diagonal x n (n={n}, d={d})", abs(cross_mean), 3 * cross_stderr)
    return result


# Suite registry - maps suite names to suite functions
SUITES = {
    'moments': verify_moments,
    'gradients': verify_gradients,
    'shift': verify_shift,
    'eigs': verify_eigs,
    'gaussian_approx': verify_gaussian_approx,
}

SUITE_CHOICES = ('all',) + tuple(SUITES)


def verify(suite='all', seed=0):
    """
    Run one suite, or every suite for 'all'.

    Returns:
        list of SuiteResult
    """
    names = list(SUITES) if suite == 'all' else [suite]
    results = []
    for name in names:
        if name not in SUITES:
            raise KeyError(f"Unknown suite '{name}', expected one of {', '.join(SUITE_CHOICES)}")
        start_time = time.time()
        outcome = SUITES[name](seed)
        outcome.elapsed = time.time() - start_time
        logger.info("Suite %s: %s in %.2fs", name, "passed" if outcome.passed else "FAILED", outcome.elapsed)
        results.append(outcome)
    return results
