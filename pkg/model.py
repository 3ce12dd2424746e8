"""
Linear-attention sequence model, Gaussian linear-task data and the
test-time-training (TTT) gradient updates.

The attention model collapses the query and key matrices into a single d x d
matrix W and predicts a query label as xᵀ W X_ctxᵀ y_ctx. A TTT step is one
gradient step on the squared loss over k held-out query rows of the prompt.
"""

from dataclasses import dataclass

import numpy as np

from errors import DomainError, ShapeError
from linalg import (
    as_matrix,
    as_vector,
    bartlett_factor,
    random_gaussian_matrix,
    random_orthonormal,
)

# d x d float64 matrix
AttentionWeights = np.ndarray

ORTHONORMAL_TOL = 1e-12


def _frozen(arr):
    arr = np.array(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CovarianceModel:
    """
    Jointly diagonalisable feature / task covariance pair.

    Σx = Q diag(feature_eigs) Qᵀ and Σβ = Q diag(task_eigs) Qᵀ.
    """
    basis: np.ndarray
    feature_eigs: np.ndarray
    task_eigs: np.ndarray

    def __post_init__(self):
        q = as_matrix(self.basis, "basis")
        fe = as_vector(self.feature_eigs, "feature_eigs")
        te = as_vector(self.task_eigs, "task_eigs")
        d = q.shape[0]
        if q.shape != (d, d) or fe.shape != (d,) or te.shape != (d,):
            raise ShapeError(
                f"Covariance model needs a square basis and two length-{d} eigenvalue vectors, "
                f"got {q.shape}, {fe.shape}, {te.shape}"
            )
        if np.max(np.abs(q.T @ q - np.eye(d))) > ORTHONORMAL_TOL * max(1, d):
            raise DomainError("Covariance basis is not orthonormal")
        if np.any(fe < 0) or np.any(te < 0):
            raise DomainError("Covariance eigenvalues must be non-negative")
        object.__setattr__(self, 'basis', _frozen(q))
        object.__setattr__(self, 'feature_eigs', _frozen(fe))
        object.__setattr__(self, 'task_eigs', _frozen(te))

    @classmethod
    def isotropic(cls, d, task_scale=1.0):
        """Σx = I, Σβ = task_scale·I."""
        return cls(np.eye(d), np.ones(d), np.full(d, float(task_scale)))

    @classmethod
    def diagonal(cls, feature_eigs, task_eigs):
        """Both covariances diagonal in the standard basis."""
        fe = np.asarray(feature_eigs, dtype=np.float64)
        return cls(np.eye(fe.shape[0]), fe, task_eigs)

    @classmethod
    def random(cls, rng, d, zero_task_fraction=0.0):
        """
        Haar basis, feature eigenvalues in [0.2, 2] and task eigenvalues in
        [0, 2], a random subset of roughly zero_task_fraction of them set to 0.
        """
        basis = random_orthonormal(rng, d)
        feature_eigs = rng.uniform(0.2, 2.0, d)
        task_eigs = rng.uniform(0.0, 2.0, d)
        task_eigs[rng.random(d) < zero_task_fraction] = 0.0
        return cls(basis, feature_eigs, task_eigs)

    @property
    def d(self):
        return self.basis.shape[0]

    @property
    def features_identity(self):
        """True when Σx = I, whatever the basis."""
        return bool(np.all(self.feature_eigs == 1.0))

    @property
    def standard_basis(self):
        return bool(np.array_equal(self.basis, np.eye(self.d)))

    def feature_matrix(self):
        return (self.basis * self.feature_eigs) @ self.basis.T

    def factor(self):
        """Square-root factor Q·diag(√λx) of Σx."""
        return self.basis * np.sqrt(self.feature_eigs)

    def feature_sqrt(self):
        """Symmetric square root Σx^{1/2}."""
        return (self.basis * np.sqrt(self.feature_eigs)) @ self.basis.T


@dataclass(frozen=True)
class TaskInstance:
    """Test-time task: labels are y = xᵀ beta + N(0, sigma²)."""
    beta: np.ndarray
    sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'beta', _frozen(as_vector(self.beta, "beta")))
        sigma = float(self.sigma)
        if not np.isfinite(sigma) or sigma < 0:
            raise DomainError(f"Noise level sigma must be finite and >= 0, got {self.sigma!r}")
        object.__setattr__(self, 'sigma', sigma)

    @property
    def d(self):
        return self.beta.shape[0]

    @property
    def beta_norm_sq(self):
        return float(self.beta @ self.beta)


@dataclass(frozen=True)
class TestTimeSet:
    """
    One sampled test-time prompt.

    The first n rows are the fixed context, the remaining k rows are the
    query-training block used for the TTT gradient.
    """
    __test__ = False  # keeps pytest from collecting this class

    X_ctx: np.ndarray
    y_ctx: np.ndarray
    X_tr: np.ndarray
    y_tr: np.ndarray

    def __post_init__(self):
        x_ctx = as_matrix(self.X_ctx, "X_ctx")
        y_ctx = as_vector(self.y_ctx, "y_ctx")
        x_tr = np.asarray(self.X_tr, dtype=np.float64)
        y_tr = np.asarray(self.y_tr, dtype=np.float64).reshape(-1)
        d = x_ctx.shape[1]
        if x_tr.ndim != 2 or x_tr.shape[1] != d:
            raise ShapeError(f"X_tr must have {d} columns, got shape {x_tr.shape}")
        if y_ctx.shape[0] != x_ctx.shape[0] or y_tr.shape[0] != x_tr.shape[0]:
            raise ShapeError("Label vectors must match the row counts of their blocks")
        for name, arr in (('X_ctx', x_ctx), ('y_ctx', y_ctx), ('X_tr', x_tr), ('y_tr', y_tr)):
            object.__setattr__(self, name, _frozen(arr))

    @property
    def n(self):
        return self.X_ctx.shape[0]

    @property
    def k(self):
        return self.X_tr.shape[0]

    @property
    def d(self):
        return self.X_ctx.shape[1]

    def context_vector(self):
        """u = X_ctxᵀ y_ctx."""
        return self.X_ctx.T @ self.y_ctx

    def query_summary(self):
        return QuerySummary(self.X_tr.T, self.X_tr.T @ self.y_tr)


@dataclass(frozen=True)
class QuerySummary:
    """
    Sufficient statistics of the query-training block.

    The TTT gradient sees X_tr only through G = X_trᵀX_tr = factor·factorᵀ and
    xty = X_trᵀ y_tr.
    """
    factor: np.ndarray
    xty: np.ndarray

    def gram_apply(self, v):
        """G·v without forming G."""
        return self.factor @ (self.factor.T @ v)


@dataclass(frozen=True)
class StepSchedule:
    """Geometric step-size schedule ηₜ = eta0·decayᵗ for t = 0..steps-1."""
    eta0: float
    decay: float = 1.0
    steps: int = 1

    def __post_init__(self):
        if not self.eta0 > 0:
            raise DomainError(f"eta0 must be > 0, got {self.eta0!r}")
        if not 0 < self.decay <= 1:
            raise DomainError(f"decay must lie in (0, 1], got {self.decay!r}")
        if self.steps < 1:
            raise DomainError(f"steps must be >= 1, got {self.steps!r}")

    def etas(self):
        return [self.eta0 * self.decay ** t for t in range(self.steps)]


def _check_weights(W, d):
    W = np.asarray(W, dtype=np.float64)
    if W.shape != (d, d):
        raise ShapeError(f"Attention weights must be {d}x{d}, got shape {W.shape}")
    return W


# ============================================================================
# FORWARD PASS AND LOSS
# ============================================================================

def forward(W, X_ctx, y_ctx, x_query):
    """
    Linear-attention prediction x_queryᵀ · W · (X_ctxᵀ y_ctx).

    Raises:
        ShapeError: If the dimensions disagree
    """
    X_ctx = as_matrix(X_ctx, "X_ctx")
    y_ctx = as_vector(y_ctx, "y_ctx")
    x_query = as_vector(x_query, "x_query")
    d = X_ctx.shape[1]
    if y_ctx.shape[0] != X_ctx.shape[0] or x_query.shape[0] != d:
        raise ShapeError(
            f"Prompt shapes disagree: X_ctx {X_ctx.shape}, y_ctx {y_ctx.shape}, x {x_query.shape}"
        )
    W = _check_weights(W, d)
    return float(x_query @ (W @ (X_ctx.T @ y_ctx)))


def empirical_train_loss(W, test_set):
    """Sum of squared prediction errors over the k query-training rows."""
    W = _check_weights(W, test_set.d)
    if test_set.k == 0:
        return 0.0
    residual = test_set.y_tr - test_set.X_tr @ (W @ test_set.context_vector())
    return float(residual @ residual)


def train_loss_gradient(W, test_set):
    """Analytic gradient −2·X_trᵀ(y_tr − X_tr W u)uᵀ of empirical_train_loss."""
    W = _check_weights(W, test_set.d)
    u = test_set.context_vector()
    residual = test_set.y_tr - test_set.X_tr @ (W @ u)
    return -2.0 * np.outer(test_set.X_tr.T @ residual, u)


# ============================================================================
# SAMPLING
# ============================================================================

def _sample_rows(rng, cov, task, rows):
    d = cov.d
    if rows == 0:
        return np.zeros((0, d)), np.zeros(0)
    X = random_gaussian_matrix(rng, rows, d, cov.factor())
    noise = rng.standard_normal(rows)
    return X, X @ task.beta + task.sigma * noise


def _check_sampling_dims(cov, task, n, k):
    if cov.d != task.d:
        raise ShapeError(f"Covariance model has d={cov.d} but task has d={task.d}")
    if n < 1:
        raise ShapeError(f"Context length n must be >= 1, got {n}")
    if k < 0:
        raise ShapeError(f"Query block size k must be >= 0, got {k}")


def sample_test_time_set(rng, cov, task, n, k):
    """
    Draw a prompt of n context rows followed by k query-training rows.

    Rows are i.i.d. N(0, Σx); labels are xᵀβ plus N(0, σ²) noise.
    """
    _check_sampling_dims(cov, task, n, k)
    X_ctx, y_ctx = _sample_rows(rng, cov, task, n)
    X_tr, y_tr = _sample_rows(rng, cov, task, k)
    return TestTimeSet(X_ctx, y_ctx, X_tr, y_tr)


def sample_context_vector(rng, cov, task, n):
    """Draw only the context block and return u = X_ctxᵀ y_ctx."""
    _check_sampling_dims(cov, task, n, 0)
    X_ctx, y_ctx = _sample_rows(rng, cov, task, n)
    return X_ctx.T @ y_ctx


def sample_query_summary(rng, cov, task, k):
    """
    Draw the query-block statistics (G, X_trᵀy_tr) with the exact joint law.

    For k <= d the rows are sampled directly. For k > d the Gram matrix is
    drawn from its Wishart(k, Σx) law through the Bartlett factor C
    (G = C Cᵀ) and X_trᵀξ = σ·C·z, which costs O(d²) instead of O(k·d).
    """
    _check_sampling_dims(cov, task, 1, k)
    d = cov.d
    if k <= d:
        X_tr, y_tr = _sample_rows(rng, cov, task, k)
        return QuerySummary(X_tr.T, X_tr.T @ y_tr)
    lower = bartlett_factor(rng, k, d)
    factor = lower if cov.features_identity and cov.standard_basis else cov.factor() @ lower
    z = rng.standard_normal(d)
    xty = factor @ (factor.T @ task.beta + task.sigma * z)
    return QuerySummary(factor, xty)


# ============================================================================
# TEST-TIME TRAINING
# ============================================================================

def ttt_step_summary(W, u, summary, eta):
    """
    One TTT step from sufficient statistics.

    W' = W + 2η·(X_trᵀy_tr − G W u) uᵀ
    """
    if eta < 0:
        raise DomainError(f"Step size must be >= 0, got {eta!r}")
    W = np.asarray(W, dtype=np.float64)
    if eta == 0:
        return W.copy()
    direction = summary.xty - summary.gram_apply(W @ u)
    return W + (2.0 * eta) * np.outer(direction, u)


def ttt_multi_step_summary(W, u, summary, schedule):
    for eta in schedule.etas():
        W = ttt_step_summary(W, u, summary, eta)
    return W


def ttt_step(W, test_set, eta):
    """
    Single gradient step on the query-training loss.

    Args:
        W: Current attention weights (d x d)
        test_set: Sampled TestTimeSet
        eta: Step size >= 0

    Returns:
        W + 2η·X_trᵀ(y_tr − X_tr W u)uᵀ with u = X_ctxᵀ y_ctx (a rank <= 1 change)
    """
    W = _check_weights(W, test_set.d)
    return ttt_step_summary(W, test_set.context_vector(), test_set.query_summary(), eta)


def ttt_multi_step(W, test_set, schedule):
    """Apply ttt_step `schedule.steps` times with geometrically decaying step sizes."""
    W = _check_weights(W, test_set.d)
    return ttt_multi_step_summary(W, test_set.context_vector(), test_set.query_summary(), schedule)
