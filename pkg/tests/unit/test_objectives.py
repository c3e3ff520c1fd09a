"""
Unit tests for shard objectives, smoothness constants and the reference solve
"""
import numpy as np
import pytest
import scipy.sparse as sp
from scipy.optimize import check_grad

from ldqn.core.error_handler import ConfigError, DimensionTooLarge
from ldqn.core.objectives import (
    FiniteSumObjective, LogisticShard, QuadraticShard, global_constants,
    random_quadratic_shards, reference_solution, shard_gradient, shard_hessian, shard_loss
)


@pytest.mark.unit
class TestLogisticShard:
    def test_loss_at_zero(self, logistic_shard):
        assert logistic_shard.loss(np.zeros(logistic_shard.d)) == pytest.approx(np.log(2.0))

    def test_gradient_matches_finite_differences(self, logistic_shard, rng):
        x = 0.3 * rng.standard_normal(logistic_shard.d)
        err = check_grad(logistic_shard.loss, logistic_shard.gradient, x)
        assert err < 1e-5

    def test_hessian_vector_matches_dense(self, logistic_shard, rng):
        x, v = rng.standard_normal(logistic_shard.d), rng.standard_normal(logistic_shard.d)
        np.testing.assert_allclose(logistic_shard.hessian(x) @ v, logistic_shard.hessian_vector(x, v),
                                   rtol=1e-10, atol=1e-12)

    def test_hessian_spectrum_within_constants(self, logistic_shard, rng):
        c = logistic_shard.constants()
        eigs = np.linalg.eigvalsh(logistic_shard.hessian(rng.standard_normal(logistic_shard.d)))
        assert eigs.min() >= c.mu - 1e-12
        assert eigs.max() <= c.L + 1e-12

    def test_large_margins_do_not_overflow(self):
        shard = LogisticShard(sp.csr_matrix(np.array([[1000.0], [-1000.0]])), [1.0, 1.0], lam=0.0)
        assert np.isfinite(shard.loss(np.array([10.0])))
        assert np.all(np.isfinite(shard.gradient(np.array([10.0]))))

    def test_empty_shard_is_pure_regularizer(self):
        shard = LogisticShard(sp.csr_matrix((0, 3)), np.zeros(0), lam=0.5)
        x = np.array([1.0, 2.0, -1.0])
        assert shard.loss(x) == pytest.approx(0.25 * 6.0)
        np.testing.assert_allclose(shard.gradient(x), 0.5 * x)
        np.testing.assert_allclose(shard.hessian(x), 0.5 * np.eye(3))

    def test_invalid_labels(self):
        with pytest.raises(ConfigError):
            LogisticShard(sp.csr_matrix(np.eye(2)), [0.0, 1.0], lam=0.1)

    def test_dense_cap(self, logistic_shard):
        with pytest.raises(DimensionTooLarge):
            logistic_shard.hessian(np.zeros(logistic_shard.d), cap=2)

    def test_module_functions_delegate(self, logistic_shard):
        x = np.zeros(logistic_shard.d)
        assert shard_loss(logistic_shard, x) == logistic_shard.loss(x)
        np.testing.assert_array_equal(shard_gradient(logistic_shard, x), logistic_shard.gradient(x))
        np.testing.assert_array_equal(shard_hessian(logistic_shard, x), logistic_shard.hessian(x))


@pytest.mark.unit
class TestQuadraticShard:
    def test_constants_from_spectrum(self):
        shard = QuadraticShard(np.diag([1.0, 3.0]), np.zeros(2))
        c = shard.constants()
        assert (c.mu, c.L, c.kappa) == pytest.approx((1.0, 3.0, 3.0))

    def test_rejects_asymmetric(self):
        with pytest.raises(ConfigError):
            QuadraticShard(np.array([[1.0, 1.0], [0.0, 1.0]]), np.zeros(2))

    def test_random_shards_share_minimizer(self):
        shards = random_quadratic_shards(3, 5, 1.0, 4.0, seed=2)
        x_star = shards[0].x_star
        for shard in shards:
            np.testing.assert_allclose(shard.gradient(x_star), 0.0, atol=1e-12)
            eigs = np.linalg.eigvalsh(shard.Q)
            assert eigs[0] == pytest.approx(1.0)
            assert eigs[-1] == pytest.approx(4.0)

    def test_random_shards_reject_bad_range(self):
        with pytest.raises(ConfigError):
            random_quadratic_shards(2, 3, 2.0, 1.0)


@pytest.mark.unit
class TestFiniteSum:
    def test_global_constants_are_conservative(self, quadratic_shards):
        c = global_constants(quadratic_shards)
        assert c.mu == pytest.approx(1.0)
        assert c.L == pytest.approx(2.0)

    def test_zero_mu_gives_infinite_kappa(self):
        shard = LogisticShard(sp.csr_matrix(np.eye(2)), [1.0, -1.0], lam=0.0)
        assert global_constants([shard]).kappa == float("inf")

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigError):
            FiniteSumObjective([QuadraticShard(np.eye(2), np.zeros(2)),
                                QuadraticShard(np.eye(3), np.zeros(3))])

    def test_reference_solution_quadratic(self, quadratic_objective, quadratic_shards):
        x, f, grad_norm = reference_solution(quadratic_objective)
        np.testing.assert_allclose(x, quadratic_shards[0].x_star, atol=1e-10)
        assert f == pytest.approx(0.0, abs=1e-18)
        assert grad_norm <= 1e-12

    def test_reference_solution_logistic(self, logistic_shards):
        objective = FiniteSumObjective(logistic_shards)
        x, f, grad_norm = reference_solution(objective)
        assert grad_norm <= 1e-10
        assert f <= objective.loss(np.zeros(objective.d))

    def test_reference_solution_above_cap_uses_quasi_newton(self, logistic_shards):
        objective = FiniteSumObjective(logistic_shards)
        x_newton, f_newton, _ = reference_solution(objective)
        x_lbfgs, f_lbfgs, _ = reference_solution(objective, tol=1e-9, cap=2)
        assert f_lbfgs == pytest.approx(f_newton, abs=1e-10)
        np.testing.assert_allclose(x_lbfgs, x_newton, atol=1e-5)

    def test_reference_solution_singular_hessian(self):
        # lam = 0 and an all-zero second feature
        rows = sp.csr_matrix(np.array([[1.0, 0.0]] * 4))
        objective = FiniteSumObjective([LogisticShard(rows, np.array([1.0, 1.0, 1.0, -1.0]), lam=0.0)])
        x, f, grad_norm = reference_solution(objective)
        np.testing.assert_allclose(x, [np.log(3.0), 0.0], atol=1e-9)
        assert grad_norm <= 1e-10
