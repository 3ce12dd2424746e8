import numpy as np
import pytest

from errors import DomainError, ShapeError
from linalg import make_rng, random_orthonormal
from model import (
    CovarianceModel,
    StepSchedule,
    TaskInstance,
    TestTimeSet,
    empirical_train_loss,
    forward,
    sample_context_vector,
    sample_query_summary,
    sample_test_time_set,
    train_loss_gradient,
    ttt_multi_step,
    ttt_step,
    ttt_step_summary,
)


def random_set(rng, d, n, k):
    return TestTimeSet(
        rng.standard_normal((n, d)),
        rng.standard_normal(n),
        rng.standard_normal((k, d)),
        rng.standard_normal(k),
    )


# ============================================================================
# TYPES
# ============================================================================

def test_covariance_model_rejects_non_orthonormal_basis():
    with pytest.raises(DomainError):
        CovarianceModel(np.array([[1.0, 0.1], [0.0, 1.0]]), np.ones(2), np.ones(2))


def test_covariance_model_rejects_negative_eigenvalues():
    with pytest.raises(DomainError):
        CovarianceModel.diagonal([1.0, -0.5], [1.0, 1.0])


def test_covariance_model_shape_mismatch():
    with pytest.raises(ShapeError):
        CovarianceModel(np.eye(3), np.ones(3), np.ones(2))


def test_covariance_model_matrices(rng):
    q = random_orthonormal(rng, 4)
    cov = CovarianceModel(q, np.array([1.0, 2.0, 0.5, 3.0]), np.array([0.0, 1.0, 1.0, 2.0]))
    np.testing.assert_allclose(cov.feature_matrix(), q @ np.diag([1.0, 2.0, 0.5, 3.0]) @ q.T, atol=1e-12)
    np.testing.assert_allclose(cov.factor() @ cov.factor().T, cov.feature_matrix(), atol=1e-12)
    np.testing.assert_allclose(cov.feature_sqrt() @ cov.feature_sqrt(), cov.feature_matrix(), atol=1e-12)
    assert not cov.features_identity


def test_random_covariance_model_zero_fraction(rng):
    cov = CovarianceModel.random(rng, 200, zero_task_fraction=0.5)
    zeros = np.count_nonzero(cov.task_eigs == 0)
    assert 60 < zeros < 140
    assert np.all(cov.feature_eigs >= 0.2)


def test_task_instance_rejects_negative_sigma():
    with pytest.raises(DomainError):
        TaskInstance(np.ones(2), -0.1)


def test_test_time_set_shape_checks(rng):
    with pytest.raises(ShapeError):
        TestTimeSet(np.ones((3, 2)), np.ones(2), np.ones((1, 2)), np.ones(1))
    with pytest.raises(ShapeError):
        TestTimeSet(np.ones((3, 2)), np.ones(3), np.ones((1, 3)), np.ones(1))


def test_step_schedule_validation():
    assert StepSchedule(0.1, 0.5, 3).etas() == pytest.approx([0.1, 0.05, 0.025])
    with pytest.raises(DomainError):
        StepSchedule(0.0)
    with pytest.raises(DomainError):
        StepSchedule(0.1, decay=1.5)
    with pytest.raises(DomainError):
        StepSchedule(0.1, steps=0)


# ============================================================================
# FORWARD AND LOSS
# ============================================================================

def test_forward_zero_weights(rng):
    X = rng.standard_normal((5, 3))
    assert forward(np.zeros((3, 3)), X, rng.standard_normal(5), rng.standard_normal(3)) == 0.0


def test_forward_scalar_case():
    assert forward([[2.0]], [[3.0]], [5.0], [7.0]) == pytest.approx(7 * 2 * 3 * 5)


def test_forward_matches_block_attention(rng):
    n, d = 4, 3
    X = rng.standard_normal((n, d))
    y = rng.standard_normal(n)
    x = rng.standard_normal(d)
    W = rng.standard_normal((d, d))

    Z = np.zeros((n + 1, d + 1))
    Z[:n, :d], Z[:n, d] = X, y
    Z[n, :d] = x
    qk = np.zeros((d + 1, d + 1))
    qk[:d, :d] = W
    value = np.zeros((d + 1, d + 1))
    value[d, d] = 1.0
    mask = np.ones(n + 1)
    mask[n] = 0.0  # the query does not attend to its own (unknown) label
    attention = (Z @ qk @ Z.T) * mask
    out = attention @ Z @ value

    assert forward(W, X, y, x) == pytest.approx(out[n, d], rel=1e-12)


def test_forward_shape_error(rng):
    with pytest.raises(ShapeError):
        forward(np.eye(3), rng.standard_normal((4, 3)), rng.standard_normal(4), rng.standard_normal(2))


def test_empirical_train_loss_matches_loop(rng):
    test_set = random_set(rng, 3, 4, 5)
    W = rng.standard_normal((3, 3))
    u = test_set.X_ctx.T @ test_set.y_ctx
    expected = sum((test_set.y_tr[i] - test_set.X_tr[i] @ W @ u) ** 2 for i in range(5))
    assert empirical_train_loss(W, test_set) == pytest.approx(expected, rel=1e-12)


def test_empirical_train_loss_empty_block(rng):
    test_set = TestTimeSet(rng.standard_normal((4, 3)), rng.standard_normal(4), np.zeros((0, 3)), np.zeros(0))
    assert empirical_train_loss(np.eye(3), test_set) == 0.0


def test_empirical_train_loss_interpolation():
    # one context row e1 with label 1, so u = e1; W = I interpolates y = x1
    test_set = TestTimeSet([[1.0, 0.0]], [1.0], [[2.0, 0.0], [-1.0, 3.0]], [2.0, -1.0])
    assert empirical_train_loss(np.eye(2), test_set) == 0.0


# ============================================================================
# TTT UPDATES
# ============================================================================

def test_ttt_step_zero_eta_returns_weights(rng):
    test_set = random_set(rng, 3, 4, 2)
    W = rng.standard_normal((3, 3))
    np.testing.assert_array_equal(ttt_step(W, test_set, 0.0), W)


def test_ttt_step_negative_eta(rng):
    with pytest.raises(DomainError):
        ttt_step(np.eye(3), random_set(rng, 3, 4, 2), -0.1)


def test_ttt_step_empty_query_block(rng):
    test_set = TestTimeSet(rng.standard_normal((4, 3)), rng.standard_normal(4), np.zeros((0, 3)), np.zeros(0))
    W = rng.standard_normal((3, 3))
    np.testing.assert_array_equal(ttt_step(W, test_set, 0.3), W)


def test_ttt_step_is_gradient_step(rng):
    test_set = random_set(rng, 3, 4, 2)
    W = rng.standard_normal((3, 3))
    eta = 0.01
    np.testing.assert_allclose(ttt_step(W, test_set, eta), W - eta * train_loss_gradient(W, test_set), atol=1e-12)


def test_ttt_step_is_rank_one(rng):
    test_set = random_set(rng, 5, 6, 3)
    W = rng.standard_normal((5, 5))
    singular = np.linalg.svd(ttt_step(W, test_set, 0.05) - W, compute_uv=False)
    assert singular[1] <= 1e-10 * singular[0]


@pytest.mark.parametrize("zero_weights", [True, False])
def test_ttt_step_label_scale(rng, zero_weights):
    d, c, eta = 4, 3.0, 0.02
    test_set = random_set(rng, d, 5, 3)
    scaled_set = TestTimeSet(test_set.X_ctx, c * test_set.y_ctx, test_set.X_tr, c * test_set.y_tr)
    W = np.zeros((d, d)) if zero_weights else rng.standard_normal((d, d))
    np.testing.assert_allclose(scaled_set.context_vector(), c * test_set.context_vector(), rtol=1e-12)
    np.testing.assert_allclose(ttt_step(W, scaled_set, eta) - W, c ** 2 * (ttt_step(W, test_set, eta) - W), atol=1e-10)


def test_multi_step_single_step_matches(rng):
    test_set = random_set(rng, 3, 4, 2)
    W = rng.standard_normal((3, 3))
    np.testing.assert_array_equal(ttt_multi_step(W, test_set, StepSchedule(0.02)), ttt_step(W, test_set, 0.02))


def test_multi_step_unrolls(rng):
    test_set = random_set(rng, 3, 4, 2)
    W = rng.standard_normal((3, 3))
    expected = ttt_step(ttt_step(ttt_step(W, test_set, 0.04), test_set, 0.02), test_set, 0.01)
    np.testing.assert_allclose(ttt_multi_step(W, test_set, StepSchedule(0.04, 0.5, 3)), expected, atol=1e-14)


def test_multi_step_small_eta_decreases_train_loss(rng):
    test_set = random_set(rng, 3, 4, 5)
    W = rng.standard_normal((3, 3))
    u = test_set.context_vector()
    # the train loss is η-smooth with constant 2·‖X_tr‖²‖u‖², so 1/(100·that) is far below the optimal step
    eta = 1.0 / (100 * 2 * np.linalg.norm(test_set.X_tr, 2) ** 2 * (u @ u))
    losses = [empirical_train_loss(W, test_set)]
    for _ in range(10):
        W = ttt_step(W, test_set, eta)
        losses.append(empirical_train_loss(W, test_set))
    assert all(b < a for a, b in zip(losses, losses[1:]))


# ============================================================================
# SAMPLING
# ============================================================================

def test_sample_noiseless_labels(rng, iso_problem):
    cov, task = iso_problem
    test_set = sample_test_time_set(rng, cov, task, 5, 3)
    np.testing.assert_allclose(test_set.y_ctx, test_set.X_ctx @ task.beta, atol=1e-14)
    np.testing.assert_allclose(test_set.y_tr, test_set.X_tr @ task.beta, atol=1e-14)


def test_sample_zero_task_labels(rng, iso_problem):
    cov, _ = iso_problem
    test_set = sample_test_time_set(rng, cov, TaskInstance(np.zeros(cov.d)), 5, 3)
    assert np.all(test_set.y_ctx == 0) and np.all(test_set.y_tr == 0)


def test_sample_noise_variance(rng):
    cov = CovarianceModel.isotropic(2)
    task = TaskInstance(np.array([1.0, -1.0]), sigma=0.7)
    test_set = sample_test_time_set(rng, cov, task, 100_000, 0)
    residual = test_set.y_ctx - test_set.X_ctx @ task.beta
    var = residual.var(ddof=1)
    # Var of a sample variance is 2σ⁴/(N−1)
    assert abs(var - 0.49) < 3 * np.sqrt(2 * 0.49 ** 2 / (residual.size - 1))


def test_sample_dimension_mismatch(rng):
    with pytest.raises(ShapeError):
        sample_test_time_set(rng, CovarianceModel.isotropic(3), TaskInstance(np.ones(2)), 4, 1)


def test_query_summary_matches_rows(rng, iso_problem):
    _, task = iso_problem
    test_set = random_set(rng, task.d, 4, 3)
    summary = test_set.query_summary()
    v = rng.standard_normal(task.d)
    np.testing.assert_allclose(summary.gram_apply(v), test_set.X_tr.T @ (test_set.X_tr @ v), atol=1e-12)
    u = test_set.context_vector()
    W = rng.standard_normal((task.d, task.d))
    np.testing.assert_array_equal(ttt_step_summary(W, u, summary, 0.1), ttt_step(W, test_set, 0.1))


def test_query_summary_wishart_moments():
    # k > d goes through the Bartlett factor; E[G] = kΣx and E[X_trᵀy] = kΣxβ
    d, k, draws = 3, 40, 4000
    cov = CovarianceModel.diagonal([1.0, 2.0, 0.5], [1.0, 1.0, 1.0])
    task = TaskInstance(np.array([1.0, -0.5, 2.0]), sigma=0.5)
    gram_total = np.zeros((d, d))
    xty_total = np.zeros(d)
    for t in range(draws):
        summary = sample_query_summary(make_rng(11, t), cov, task, k)
        gram_total += summary.factor @ summary.factor.T
        xty_total += summary.xty
    sigma_x = cov.feature_matrix()
    np.testing.assert_allclose(gram_total / draws, k * sigma_x, atol=0.1 * k)
    np.testing.assert_allclose(xty_total / draws, k * sigma_x @ task.beta, atol=0.1 * k)


def test_context_vector_noiseless_mean(rng, iso_problem):
    cov, task = iso_problem
    n, draws = 10, 5000
    total = sum(sample_context_vector(rng, cov, task, n) for _ in range(draws))
    np.testing.assert_allclose(total / draws, n * task.beta, atol=0.5)
