import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from carecontracts.domain import build_normalized_system
from carecontracts.errors import EnumerationTooLargeError, SingularMatrixError
from carecontracts.lp import (
    StandardFormLP,
    enumerate_basic_points,
    rref,
    solve_linear_system,
    solve_lp,
)
from carecontracts.solvers import non_negative_lp
from carecontracts.synthetic import sample_model_params


class TestSolveLinearSystem:
    def test_identity(self):
        rhs = np.array([3.0, -1.0, 2.5])
        assert solve_linear_system(np.eye(3), rhs) == pytest.approx(rhs, abs=0)

    def test_singular_detected(self):
        with pytest.raises(SingularMatrixError):
            solve_linear_system([[1.0, 2.0], [2.0, 4.0]], [1.0, 2.0])

    def test_binding_system_matches_closed_form(self, icp_params):
        system = build_normalized_system(icp_params)
        stacked = system.stacked()
        rhs = system.rhs() - stacked[:, 3] * 1.0
        head = solve_linear_system(stacked[:, :3], rhs)
        assert head == pytest.approx([-1.2602, -1.1359, 0.1637], abs=1e-4)

    @given(st.integers(0, 10**6))
    @settings(max_examples=100, deadline=None)
    def test_residual_envelope(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 7))
        a = rng.normal(size=(n, n)) + n * np.eye(n)
        b = rng.normal(size=n)
        x = solve_linear_system(a, b)
        assert float(np.max(np.abs(a @ x - b))) <= 1e-9 * (1 + float(np.max(np.abs(b))))


class TestRref:
    def test_case_study_rank_three(self, icp_params):
        system = build_normalized_system(icp_params)
        result = rref(system.stacked())
        assert result.rank == 3
        assert result.pivot_cols == (0, 1, 2)

    def test_zero_matrix(self):
        result = rref(np.zeros((3, 4)))
        assert result.rank == 0
        assert result.pivot_cols == ()

    def test_near_boundary_flags_small_pivot(self):
        # push the uniform-high survival rate to the representable edge
        from carecontracts.domain import ModelParams

        params = ModelParams(0.2, 0.999999, 0.3, 0.999999, 0.5)
        result = rref(build_normalized_system(params).stacked())
        assert result.rank == 3
        assert result.min_pivot < 1e-5

    @given(st.integers(0, 10**6))
    @settings(max_examples=100, deadline=None)
    def test_idempotent(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(int(rng.integers(1, 5)), int(rng.integers(1, 6))))
        once = rref(a)
        twice = rref(once.matrix)
        assert twice.rank == once.rank
        assert np.allclose(twice.matrix, once.matrix, atol=1e-9)


class TestEnumeration:
    def test_case_study_two_optimal_vertices(self, icp_params):
        points = enumerate_basic_points(non_negative_lp(icp_params))
        both = [p for p in points if p.primal_feasible and p.dual_feasible]
        assert len(both) == 2
        solutions = sorted(p.solution[3] for p in both)
        expected = sorted([1.0, 1 / 0.85])
        assert solutions == pytest.approx(expected, abs=1e-10)
        by_p01 = {round(p.solution[1], 6): p for p in both}
        assert by_p01[1.0].solution == pytest.approx([0, 1, 0, 1, 0, 0], abs=1e-10)
        assert by_p01[0.0].solution == pytest.approx(
            [0, 0, 0, 1 / 0.85, 0, 1 - 0.75 / 0.85], abs=1e-10
        )

    def test_identity_rows_origin(self):
        lp = StandardFormLP(
            objective=np.ones(3),
            eq_matrix=np.eye(3),
            eq_rhs=np.zeros(3),
        )
        points = enumerate_basic_points(lp)
        assert len(points) == 1
        assert points[0].solution == pytest.approx(np.zeros(3), abs=0)

    def test_variable_cap(self):
        with pytest.raises(EnumerationTooLargeError):
            enumerate_basic_points(
                StandardFormLP(np.ones(13), np.ones((1, 13)), np.ones(1))
            )

    def test_combination_cap(self):
        lp = StandardFormLP(np.ones(12), np.vstack([np.eye(6), np.eye(6)]).T, np.ones(6))
        with pytest.raises(EnumerationTooLargeError):
            enumerate_basic_points(lp, cap=10)


class TestSolveLP:
    def test_case_study_value(self, icp_params):
        result = solve_lp(non_negative_lp(icp_params))
        assert result.status == "optimal"
        assert result.value == pytest.approx(0.44, abs=1e-12)
        assert len(result.optimal_points) == 2

    def test_random_params_value_is_gamma(self, rng):
        for _ in range(25):
            params = sample_model_params(rng)
            result = solve_lp(non_negative_lp(params))
            assert result.status == "optimal"
            assert result.value == pytest.approx(params.gamma, abs=1e-10)

    def test_zero_objective_everything_optimal(self, icp_params):
        lp = non_negative_lp(icp_params, objective=np.zeros(4))
        result = solve_lp(lp)
        assert result.status == "optimal"
        assert result.value == 0.0
        feasible = [p for p in enumerate_basic_points(lp) if p.primal_feasible]
        assert len(result.optimal_points) == len(feasible)

    def test_infeasible(self):
        # x1 + x2 = -1 with x >= 0 has no solution
        lp = StandardFormLP(np.ones(2), np.array([[1.0, 1.0]]), np.array([-1.0]))
        assert solve_lp(lp).status == "infeasible"

    def test_unbounded(self):
        # min -x1 with x1 - x2 = 0: ray (t, t) drops the objective forever
        lp = StandardFormLP(np.array([-1.0, 0.0]), np.array([[1.0, -1.0]]), np.array([0.0]))
        assert solve_lp(lp).status == "unbounded"

    def test_strong_duality_at_optimum(self, rng):
        for _ in range(10):
            params = sample_model_params(rng)
            result = solve_lp(non_negative_lp(params))
            assert any(p.dual_feasible for p in result.optimal_points)
            for point in result.optimal_points:
                assert point.value == pytest.approx(result.value, abs=1e-10)
