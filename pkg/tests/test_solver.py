import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from otcd.solver import (
    SolverConfig,
    SolverNumericalError,
    TransportPlan,
    barycentric_projection,
    cost_matrix,
    lp_exact_small,
    sinkhorn_balanced,
    sinkhorn_unbalanced,
)


def _uniform_violations(plan: TransportPlan) -> tuple[float, float]:
    n0, n1 = plan.coupling.shape
    row = np.abs(plan.row_marginal - 1.0 / n0).sum()
    col = np.abs(plan.col_marginal - 1.0 / n1).sum()
    return row, col


class TestCostMatrix:
    def test_coincident_points(self):
        np.testing.assert_array_equal(
            cost_matrix(np.zeros((1, 3)), np.zeros((1, 3))), [[0.0]]
        )

    def test_3_4_5_triangle(self):
        C = cost_matrix(np.array([[0.0, 0.0, 0.0]]), np.array([[3.0, 4.0, 0.0]]))
        np.testing.assert_allclose(C, [[25.0]])

    def test_two_by_two(self):
        C = cost_matrix(
            np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]),
            np.array([[0.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
        )
        np.testing.assert_allclose(C, [[0.0, 1.0], [1.0, 2.0]], atol=1e-12)

    def test_translation_invariance(self):
        rng = np.random.default_rng(0)
        X0, X1 = rng.normal(size=(5, 3)), rng.normal(size=(8, 3))
        t = np.array([1e5, -2e5, 3e4])
        np.testing.assert_allclose(
            cost_matrix(X0 + t, X1 + t), cost_matrix(X0, X1), rtol=1e-9, atol=1e-8
        )

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            cost_matrix(np.empty((0, 3)), np.zeros((1, 3)))

    def test_joint_translation_shifts_plan_and_projection(self):
        rng = np.random.default_rng(13)
        X0, X1 = rng.normal(size=(7, 3)), rng.normal(size=(9, 3))
        t = np.array([12.5, -3.0, 40.0])
        cfg = SolverConfig(epsilon=0.1, tol=1e-10)
        base = sinkhorn_balanced(cost_matrix(X0, X1), cfg)
        moved = sinkhorn_balanced(cost_matrix(X0 + t, X1 + t), cfg)
        np.testing.assert_allclose(moved.coupling, base.coupling, atol=1e-9)
        proj_base, _ = barycentric_projection(base, X0)
        proj_moved, _ = barycentric_projection(moved, X0 + t)
        np.testing.assert_allclose(proj_moved, proj_base + t, atol=1e-8)

    def test_nonnegative_despite_rounding(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(40, 3)) + 1e6
        assert (cost_matrix(X, X) >= 0).all()


class TestSolverConfig:
    def test_epsilon_xor_epsilon_rel(self):
        with pytest.raises(ValueError):
            SolverConfig(epsilon=1.0, epsilon_rel=0.01)
        with pytest.raises(ValueError):
            SolverConfig()

    def test_epsilon_rel_resolves_against_median(self):
        C = np.array([[1.0, 2.0], [3.0, 4.0]])
        cfg = SolverConfig(epsilon_rel=0.1).resolved(C)
        assert cfg.epsilon == pytest.approx(0.1 * 2.5)

    def test_invalid_values(self):
        with pytest.raises(ValueError):
            SolverConfig(epsilon=-1.0)
        with pytest.raises(ValueError):
            SolverConfig(epsilon=1.0, tol=0.0)
        with pytest.raises(ValueError):
            SolverConfig(epsilon=1.0, rho=-2.0)


class TestSinkhornBalanced:
    def test_1x1_only_feasible_plan(self):
        plan = sinkhorn_balanced(np.array([[3.0]]), SolverConfig(epsilon=0.5))
        np.testing.assert_allclose(plan.coupling, [[1.0]], atol=1e-12)
        assert plan.converged

    def test_symmetric_2x2_diagonal(self):
        C = np.array([[0.0, 1.0], [1.0, 0.0]])
        plan = sinkhorn_balanced(C, SolverConfig(epsilon=0.01))
        np.testing.assert_allclose(
            plan.coupling, [[0.5, 0.0], [0.0, 0.5]], atol=1e-6
        )

    def test_cost_close_to_lp_at_small_epsilon(self):
        rng = np.random.default_rng(3)
        C = rng.random((6, 7))
        plan = sinkhorn_balanced(
            C, SolverConfig(epsilon=0.001, max_iter=4000, tol=1e-5)
        )
        entropic_cost = float((plan.coupling * C).sum())
        lp_cost, _ = lp_exact_small(C)
        assert entropic_cost <= lp_cost * 1.01

    def test_marginals_within_tol_on_convergence(self):
        rng = np.random.default_rng(4)
        C = rng.random((23, 17))
        plan = sinkhorn_balanced(C, SolverConfig(epsilon=0.02, tol=1e-8))
        assert plan.converged
        row, col = _uniform_violations(plan)
        assert row <= 1e-8
        assert col <= 1e-12

    def test_log_and_scaling_domains_agree(self):
        rng = np.random.default_rng(5)
        C = rng.random((9, 11))
        base = dict(epsilon=0.05, max_iter=5000, tol=1e-12)
        p_log = sinkhorn_balanced(C, SolverConfig(**base))
        p_std = sinkhorn_balanced(C, SolverConfig(**base, log_domain=False))
        np.testing.assert_allclose(p_log.coupling, p_std.coupling, atol=1e-9)

    def test_scaling_domain_underflow_raises_with_advice(self):
        rng = np.random.default_rng(6)
        C = rng.random((12, 12)) + 0.5
        with pytest.raises(SolverNumericalError, match="log_domain"):
            sinkhorn_balanced(
                C, SolverConfig(epsilon=1e-4, log_domain=False, max_iter=50)
            )

    def test_nonconvergence_reported_not_raised(self):
        rng = np.random.default_rng(7)
        C = rng.random((10, 10))
        plan = sinkhorn_balanced(C, SolverConfig(epsilon=0.001, max_iter=2))
        assert not plan.converged
        assert plan.iterations == 2
        assert np.isfinite(plan.coupling).all()

    def test_invalid_cost_rejected(self):
        with pytest.raises(ValueError):
            sinkhorn_balanced(np.array([[np.nan]]), SolverConfig(epsilon=0.1))
        with pytest.raises(ValueError):
            sinkhorn_balanced(np.array([[-1.0]]), SolverConfig(epsilon=0.1))

    def test_overwrite_cost_reuses_buffer(self):
        rng = np.random.default_rng(8)
        C = rng.random((6, 6))
        keep = sinkhorn_balanced(C.copy(), SolverConfig(epsilon=0.05))
        buf = C.copy()
        over = sinkhorn_balanced(buf, SolverConfig(epsilon=0.05), overwrite_cost=True)
        assert np.may_share_memory(over.coupling, buf)
        np.testing.assert_allclose(over.coupling, keep.coupling, atol=1e-13)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000))
    def test_marginal_feasibility_property(self, seed):
        rng = np.random.default_rng(seed)
        C = rng.random((int(rng.integers(2, 12)), int(rng.integers(2, 12))))
        plan = sinkhorn_balanced(C, SolverConfig(epsilon=0.05, tol=1e-7))
        assert plan.converged
        row, col = _uniform_violations(plan)
        assert row <= 1e-7 and col <= 1e-10


class TestSinkhornUnbalanced:
    def test_identical_clouds_give_scaled_identity(self):
        X = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        C = cost_matrix(X, X)
        plan = sinkhorn_unbalanced(C, SolverConfig(epsilon=0.01, rho=1.0))
        np.testing.assert_allclose(plan.coupling, np.eye(3) / 3.0, atol=1e-6)
        np.testing.assert_allclose(plan.row_marginal, np.full(3, 1 / 3), atol=1e-6)

    def test_target_marginal_always_hard(self):
        rng = np.random.default_rng(9)
        C = rng.random((14, 9))
        plan = sinkhorn_unbalanced(C, SolverConfig(epsilon=0.03, rho=0.2))
        assert plan.converged
        np.testing.assert_allclose(plan.col_marginal, np.full(9, 1 / 9), atol=1e-12)

    def test_two_to_one_mass_destruction_matches_direct_minimizer(self):
        # 2 sources, 1 target: the feasible set is one-dimensional
        # (p, 1-p), so the semi-relaxed objective can be minimized directly
        # and independently of the scaling iteration.
        X0 = np.array([[0.0, 0.0, 0.0], [100.0, 0.0, 0.0]])
        X1 = np.array([[0.0, 0.0, 0.0]])
        C = cost_matrix(X0, X1)
        eps, rho = 0.1, 0.1

        def objective(p):
            P = np.array([p, 1.0 - p])
            with np.errstate(divide="ignore", invalid="ignore"):
                plogp = np.where(P > 0, P * np.log(np.where(P > 0, P, 1.0)), 0.0)
            entropy = (plogp - P).sum()
            ratio = P / 0.5
            kl = np.where(P > 0, P * np.log(np.where(P > 0, ratio, 1.0)), 0.0).sum()
            kl += -P.sum() + 1.0
            return float((P * C[:, 0]).sum() + eps * entropy + rho * kl)

        direct = minimize_scalar(objective, bounds=(1e-12, 1 - 1e-12), method="bounded")
        plan = sinkhorn_unbalanced(C, SolverConfig(epsilon=eps, rho=rho))
        p_solver = plan.coupling[0, 0]
        np.testing.assert_allclose(plan.col_marginal, [1.0], atol=1e-12)
        assert plan.row_marginal[0] > 0.99
        assert plan.row_marginal[1] < 1e-6
        assert objective(p_solver) <= direct.fun + 1e-9

    def test_large_rho_recovers_balanced_plan(self):
        rng = np.random.default_rng(10)
        C = rng.random((12, 15))
        eps = 0.05
        balanced = sinkhorn_balanced(C, SolverConfig(epsilon=eps, tol=1e-9))
        relaxed = sinkhorn_unbalanced(
            C, SolverConfig(epsilon=eps, rho=1e4 * eps, tol=1e-9, max_iter=20000)
        )
        assert np.linalg.norm(relaxed.coupling - balanced.coupling) <= 1e-3

    def test_plan_approaches_balanced_monotonically_in_rho(self):
        rng = np.random.default_rng(11)
        C = rng.random((8, 10))
        eps = 0.05
        balanced = sinkhorn_balanced(C, SolverConfig(epsilon=eps, tol=1e-10))
        dists = []
        for factor in (0.1, 1.0, 10.0, 100.0):
            plan = sinkhorn_unbalanced(
                C,
                SolverConfig(epsilon=eps, rho=factor * eps, tol=1e-10, max_iter=20000),
            )
            dists.append(np.linalg.norm(plan.coupling - balanced.coupling))
        assert dists == sorted(dists, reverse=True)

    def test_infinite_rho_points_to_balanced(self):
        with pytest.raises(ValueError, match="sinkhorn_balanced"):
            sinkhorn_unbalanced(np.eye(2), SolverConfig(epsilon=0.1, rho=math.inf))

    def test_missing_rho_rejected(self):
        with pytest.raises(ValueError, match="rho"):
            sinkhorn_unbalanced(np.eye(2), SolverConfig(epsilon=0.1))

    def test_log_and_scaling_domains_agree(self):
        rng = np.random.default_rng(12)
        C = rng.random((7, 7))
        base = dict(epsilon=0.05, rho=0.3, max_iter=20000, tol=1e-12)
        p_log = sinkhorn_unbalanced(C, SolverConfig(**base))
        p_std = sinkhorn_unbalanced(C, SolverConfig(**base, log_domain=False))
        np.testing.assert_allclose(p_log.coupling, p_std.coupling, atol=1e-9)


class TestLpExactSmall:
    def test_singleton(self):
        cost, plan = lp_exact_small(np.array([[0.0]]))
        assert cost == 0.0
        np.testing.assert_allclose(plan, [[1.0]])

    def test_zero_cost_diagonal(self):
        cost, plan = lp_exact_small(np.array([[0.0, 2.0], [2.0, 0.0]]))
        assert cost == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(plan, [[0.5, 0.0], [0.0, 0.5]], atol=1e-9)

    def test_degenerate_instance_has_flat_objective(self):
        # C[i,j] = r_i + c_j makes <P, C> constant (2.5) over the whole
        # polytope, so only the optimal value is asserted, not the vertex.
        C = np.array([[1.0, 2.0], [3.0, 4.0]])
        cost, plan = lp_exact_small(
            C, np.array([0.5, 0.5]), np.array([0.5, 0.5])
        )
        assert cost == pytest.approx(2.5, abs=1e-9)
        np.testing.assert_allclose(plan.sum(axis=1), [0.5, 0.5], atol=1e-9)
        np.testing.assert_allclose(plan.sum(axis=0), [0.5, 0.5], atol=1e-9)

    def test_instance_size_limit(self):
        with pytest.raises(ValueError, match="400"):
            lp_exact_small(np.zeros((21, 21)))

    def test_unequal_mass_rejected(self):
        with pytest.raises(ValueError, match="mass"):
            lp_exact_small(np.zeros((2, 2)), np.array([1.0, 1.0]), np.array([0.5, 0.5]))


class TestBarycentricProjection:
    def test_identity_coupling_returns_sources(self):
        X0 = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]])
        projected, mass = barycentric_projection(np.eye(3) / 3.0, X0)
        np.testing.assert_allclose(projected, X0)
        np.testing.assert_allclose(mass, np.full(3, 1 / 3))

    def test_equal_weight_column_gives_midpoint(self):
        X0 = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
        projected, _ = barycentric_projection(np.array([[0.5], [0.5]]), X0)
        np.testing.assert_allclose(projected, [[1.0, 0.0, 0.0]])

    def test_zero_mass_column_is_nan_not_crash(self):
        X0 = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
        P = np.array([[0.5, 0.0], [0.5, 0.0]])
        projected, mass = barycentric_projection(P, X0)
        assert np.isfinite(projected[0]).all()
        assert np.isnan(projected[1]).all()
        assert mass[1] == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            barycentric_projection(np.eye(3), np.zeros((2, 3)))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_projection_in_source_hull(self, seed):
        rng = np.random.default_rng(seed)
        X0 = rng.normal(size=(6, 3))
        P = rng.random((6, 4))
        projected, mass = barycentric_projection(P, X0)
        lo, hi = X0.min(axis=0), X0.max(axis=0)
        reached = mass > 1e-3 / 4
        assert (projected[reached] >= lo - 1e-9).all()
        assert (projected[reached] <= hi + 1e-9).all()


class TestTransportPlanMarginals:
    def test_recomputed_not_cached(self):
        plan = TransportPlan(coupling=np.eye(2), converged=True, iterations=1)
        np.testing.assert_allclose(plan.row_marginal, [1.0, 1.0])
        plan.coupling[0, 0] = 5.0
        np.testing.assert_allclose(plan.row_marginal, [5.0, 1.0])
