import numpy as np
import pytest

from closed_form import (
    covariance_shift,
    moment_identity,
    population_loss,
    pretrained_loss_isotropic,
    pretrained_weights_general,
    pretrained_weights_isotropic,
    shifted_covariance,
    task_optimal_weights,
    whitened_weight_eigs,
)
from errors import DomainError, ShapeError, UnsupportedRegimeError
from linalg import make_rng
from model import CovarianceModel, TaskInstance
from montecarlo import estimate_population_loss


def test_population_loss_zero_weights(rng):
    cov = CovarianceModel.random(rng, 4)
    task = TaskInstance(rng.standard_normal(4), 0.3)
    loss = population_loss(np.zeros((4, 4)), cov, task, 5)
    root = cov.feature_sqrt()
    assert loss.total == pytest.approx(float(np.sum((root @ task.beta) ** 2)) + 0.09, rel=1e-12)


def test_population_loss_breakdown_sums():
    cov = CovarianceModel.isotropic(3)
    task = TaskInstance(np.array([1.0, 2.0, -1.0]), 0.5)
    loss = population_loss(np.eye(3) / 10, cov, task, 4)
    assert loss.total == pytest.approx(loss.bias_term + loss.noise_trace_term + loss.noise_floor)
    assert loss.noise_floor == pytest.approx(0.25)
    assert loss.total >= 0


def test_population_loss_shape_error():
    with pytest.raises(ShapeError):
        population_loss(np.eye(2), CovarianceModel.isotropic(3), TaskInstance(np.ones(3)), 4)


def test_pretrained_isotropic_loss_matches_closed_form():
    rng = make_rng(21)
    for _ in range(20):
        n = int(rng.integers(1, 200))
        d = int(rng.integers(1, 65))
        beta = rng.standard_normal(d)
        loss = population_loss(
            pretrained_weights_isotropic(n, d), CovarianceModel.isotropic(d), TaskInstance(beta), n
        ).total
        assert loss == pytest.approx(float(beta @ beta) * (d + 1) / (n + d + 1), rel=1e-12)


def test_pretrained_weights_isotropic_value():
    np.testing.assert_allclose(pretrained_weights_isotropic(300, 100), np.eye(100) / 401)


@pytest.mark.parametrize("sigma", [0.0, 0.5, 1.3])
def test_noisy_pretrained_loss(sigma):
    n, d = 40, 25
    beta = np.linspace(0.5, 1.5, d)
    task = TaskInstance(beta, sigma)
    W = pretrained_weights_isotropic(n, d, sigma)
    exact = population_loss(W, CovarianceModel.isotropic(d), task, n).total
    assert pretrained_loss_isotropic(n, d, task.beta_norm_sq, sigma) == pytest.approx(exact, rel=1e-12)


def test_noisy_pretrained_weights_minimise_average_loss():
    # W* minimises the prior-averaged loss over scalar multiples of I (E‖β‖² = d for Σβ = I)
    n, d, sigma = 30, 20, 0.8
    cov = CovarianceModel.isotropic(d)
    task = TaskInstance(np.ones(d), sigma)
    scale = 1.0 / (n + d + 1 + sigma ** 2)
    best = population_loss(np.eye(d) * scale, cov, task, n).total
    for factor in (0.98, 1.02):
        assert population_loss(np.eye(d) * scale * factor, cov, task, n).total > best


def test_general_weights_reduce_to_isotropic():
    n, d = 12, 5
    np.testing.assert_allclose(
        pretrained_weights_general(CovarianceModel.isotropic(d), n),
        pretrained_weights_isotropic(n, d),
        atol=1e-15,
    )


def test_general_weights_degenerate_task_direction():
    W = pretrained_weights_general(CovarianceModel.diagonal([1.0, 1.0], [1.0, 0.0]), 3)
    np.testing.assert_allclose(W, np.diag([0.2, 0.0]), atol=1e-15)


def test_general_weights_ill_posed_direction():
    with pytest.raises(DomainError):
        pretrained_weights_general(CovarianceModel.diagonal([0.0, 1.0], [1.0, 1.0]), 3)


def test_general_weights_eigenvalue_bound(rng):
    for _ in range(20):
        d = int(rng.integers(1, 10))
        n = int(rng.integers(1, 50))
        cov = CovarianceModel.random(rng, d, zero_task_fraction=0.3)
        eigs = whitened_weight_eigs(pretrained_weights_general(cov, n, 0.4), cov)
        assert eigs.min() >= -1e-12
        assert eigs.max() <= 1.0 / (n + 1) + 1e-12


def test_general_weights_beat_scalar_perturbations(rng):
    # pretraining optimum: averaging the loss over β ~ N(0, Σβ) gives tr-weighted losses;
    # with a diagonal model, each diagonal direction is minimised independently
    cov = CovarianceModel.diagonal([1.0, 2.0, 0.5], [1.0, 0.5, 2.0])
    n = 6

    def prior_loss(W):
        # E_β L(W) = Σᵢ λβᵢ·L(W; β = eᵢ) for a diagonal Σβ
        return sum(
            cov.task_eigs[i] * population_loss(W, cov, TaskInstance(np.eye(3)[i]), n).total
            for i in range(3)
        )

    W_star = pretrained_weights_general(cov, n)
    best = prior_loss(W_star)
    for _ in range(20):
        E = rng.standard_normal((3, 3))
        assert prior_loss(W_star + 1e-3 * E) > best


def test_task_optimal_weights_scalar():
    np.testing.assert_allclose(task_optimal_weights(TaskInstance([3.0]), 2), [[0.25]])


def test_task_optimal_weights_loss_and_local_minimum(rng):
    n, d = 8, 5
    task = TaskInstance(rng.standard_normal(d))
    cov = CovarianceModel.isotropic(d)
    W_opt = task_optimal_weights(task, n)
    best = population_loss(W_opt, cov, task, n).total
    assert best == pytest.approx(0.2 * task.beta_norm_sq, rel=1e-10)
    for _ in range(100):
        E = rng.standard_normal((d, d))
        E /= np.linalg.norm(E)
        for eps in (1e-4, 1e-2):
            assert population_loss(W_opt + eps * E, cov, task, n).total >= best


def test_task_optimal_weights_stationarity(rng):
    n, d = 9, 6
    task = TaskInstance(rng.standard_normal(d))
    W = task_optimal_weights(task, n)
    outer = np.outer(task.beta, task.beta)
    np.testing.assert_allclose((n + 1) * W @ outer + task.beta_norm_sq * W, outer, atol=1e-10)


def test_task_optimal_weights_errors():
    with pytest.raises(DomainError):
        task_optimal_weights(TaskInstance(np.zeros(2)), 3)
    with pytest.raises(UnsupportedRegimeError):
        task_optimal_weights(TaskInstance(np.ones(2), 0.1), 3)


def test_moment_identity_values():
    np.testing.assert_allclose(moment_identity(np.eye(2), np.eye(2), 3), 18 * np.eye(2))
    np.testing.assert_array_equal(moment_identity(np.eye(3), np.zeros((3, 3)), 4), np.zeros((3, 3)))


def test_moment_identity_scalar_chi_square():
    # d = 1: E[(XᵀX)²]·m = s²·m·E[(χ²ₙ)²] = n(n+2)·s²·m
    n, s, m = 7, 1.7, 0.3
    assert moment_identity([[s]], [[m]], n)[0, 0] == pytest.approx(n * (n + 2) * s ** 2 * m)


def test_moment_identity_rejects_asymmetric_m():
    with pytest.raises(DomainError):
        moment_identity(np.eye(2), np.array([[1.0, 2.0], [0.0, 1.0]]), 3)


def test_covariance_shift_identity_features(rng):
    cov = CovarianceModel.isotropic(3)
    task = TaskInstance(rng.standard_normal(3), 0.2)
    W = rng.standard_normal((3, 3))
    W_bar, task_bar = covariance_shift(W, cov, task)
    np.testing.assert_allclose(W_bar, W, atol=1e-15)
    np.testing.assert_allclose(task_bar.beta, task.beta, atol=1e-15)


def test_covariance_shift_preserves_loss(rng):
    cov = CovarianceModel.random(rng, 4)
    task = TaskInstance(rng.standard_normal(4), 0.3)
    W = rng.standard_normal((4, 4)) / 10
    W_bar, task_bar = covariance_shift(W, cov, task)
    original = population_loss(W, cov, task, 7).total
    shifted = population_loss(W_bar, shifted_covariance(cov), task_bar, 7).total
    assert shifted == pytest.approx(original, rel=1e-10)


def test_covariance_shift_zero_task(rng):
    cov = CovarianceModel.random(rng, 3)
    task = TaskInstance(np.zeros(3), 0.5)
    W_bar, task_bar = covariance_shift(np.zeros((3, 3)), cov, task)
    assert population_loss(np.zeros((3, 3)), cov, task, 4).total == pytest.approx(0.25)
    assert population_loss(W_bar, shifted_covariance(cov), task_bar, 4).total == pytest.approx(0.25)

    W = rng.standard_normal((3, 3))
    W_bar, task_bar = covariance_shift(W, cov, task)
    assert population_loss(W_bar, shifted_covariance(cov), task_bar, 4).total == pytest.approx(
        population_loss(W, cov, task, 4).total, rel=1e-10
    )


def test_covariance_shift_needs_full_rank():
    cov = CovarianceModel.diagonal([1.0, 0.0], [1.0, 1.0])
    with pytest.raises(DomainError):
        covariance_shift(np.eye(2), cov, TaskInstance(np.ones(2)))


def test_population_loss_matches_nested_monte_carlo():
    rng = make_rng(31)
    cov = CovarianceModel.random(rng, 3)
    task = TaskInstance(rng.standard_normal(3), 0.3)
    W = rng.standard_normal((3, 3)) / 8
    estimate = estimate_population_loss(rng, W, cov, task, 5, 200_000)
    exact = population_loss(W, cov, task, 5).total
    assert abs(estimate.mean - exact) <= 3 * estimate.std_error


@pytest.mark.slow
def test_population_loss_nested_monte_carlo_sweep():
    rng = make_rng(32)
    for _ in range(20):
        d = int(rng.integers(1, 5))
        n = int(rng.integers(1, 9))
        cov = CovarianceModel.random(rng, d)
        task = TaskInstance(rng.standard_normal(d), float(rng.choice([0.0, 0.3])))
        W = rng.standard_normal((d, d)) / (n + d)
        estimate = estimate_population_loss(rng, W, cov, task, n, 1_000_000)
        exact = population_loss(W, cov, task, n).total
        assert abs(estimate.mean - exact) <= 3 * estimate.std_error
