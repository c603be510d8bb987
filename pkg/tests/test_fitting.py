"""Control-point fitting, knot selection and the adaptive fit loop."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cadrecon.errors import FitError
from cadrecon.fitting import (
    FitProblem,
    basis_matrix,
    default_epsilon,
    fit_lsq,
    fit_opt,
    merge_duplicates,
    pointwise_errors,
    residual,
    residual_gradient,
    spline_fit,
    weiss_candidates,
    weiss_select_knot,
)
from cadrecon.spline import Spline, evaluate, parameter_grid, transform
from conftest import make_random_spline
from oracles import brute_evaluate, central_difference


def _biquadratic(rng) -> Spline:
    k = np.array([0, 0, 0, 0.5, 1, 1, 1], dtype=float)
    return Spline((2, 2), (k, k), rng.uniform(-2, 2, (4, 4, 3)))


def _planar_patch() -> Spline:
    k = [0, 0, 1, 1]
    return Spline((1, 1), (k, k), [[[0, 0, 0], [0, 1, 0]], [[1, 0, 0], [1, 1, 0]]])


class TestResidual:
    def test_self_samples_zero(self, rng):
        s = make_random_spline(rng, 2, rational=True)
        xi = rng.uniform(0, 1, (30, 2))
        assert residual(s, xi, evaluate(s, xi)) < 1e-12

    def test_single_offset(self):
        s = _planar_patch()
        assert residual(s, [[0.3, 0.4]], [[0.3, 0.4, 2.0]]) == pytest.approx(2.0, abs=1e-14)

    def test_naive_resummation(self, rng):
        s = make_random_spline(rng, 2, rational=True)
        xi = rng.uniform(0, 1, (25, 2))
        X = rng.normal(size=(25, 3))
        naive = sum(
            np.linalg.norm(brute_evaluate(s.degrees, s.knots, s.control_points, s.weights, x) - t) for x, t in zip(xi, X)
        )
        assert residual(s, xi, X) == pytest.approx(naive, rel=1e-12)

    def test_basis_matrix_reproduces_evaluation(self, rng):
        s = make_random_spline(rng, 3, rational=True)
        xi = rng.uniform(0, 1, (10, 3))
        R = basis_matrix(s, xi)
        np.testing.assert_allclose(R @ s.control_points.reshape(-1, 3), evaluate(s, xi), atol=1e-12)
        np.testing.assert_allclose(R.sum(axis=1), 1.0, atol=1e-14)

    def test_gradient_finite_differences(self, rng):
        s = make_random_spline(rng, 2, rational=True)
        xi = rng.uniform(0, 1, (20, 2))
        X = evaluate(s, xi) + rng.normal(size=(20, 3))
        g = residual_gradient(s, xi, X)

        def f(P):
            return residual(s.with_control_points(P), xi, X)

        fd = central_difference(f, s.control_points.copy())
        assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)


class TestFitLsq:
    def test_linear_interpolation(self):
        s = Spline(1, ([0, 0, 1, 1],), [[0, 0, 0], [1, 0, 0]])
        X = np.array([[3.0, 1.0, -1.0], [5.0, 2.0, 0.5]])
        fitted, report = fit_lsq(FitProblem(s, [[0.0], [1.0]], X))
        np.testing.assert_allclose(fitted.control_points, X, atol=1e-14)
        assert report.final_max_error < 1e-14

    def test_biquadratic_round_trip(self, rng):
        truth = _biquadratic(rng)
        start = truth.with_control_points(np.zeros_like(truth.control_points))
        xi = parameter_grid(truth, 5)
        fitted, _ = fit_lsq(FitProblem(start, xi, evaluate(truth, xi)))
        np.testing.assert_allclose(fitted.control_points, truth.control_points, atol=1e-9)

    def test_too_few_targets(self, rng):
        truth = _biquadratic(rng)
        xi = rng.uniform(0, 1, (3, 2))
        with pytest.raises(FitError):
            fit_lsq(FitProblem(truth, xi, evaluate(truth, xi)))

    def test_rank_deficiency_names_points(self):
        # 4 control points, 4 distinct coordinates, but all in the first span
        k = [0, 0, 0, 0.5, 1, 1, 1]
        s = Spline(2, (k,), np.zeros((4, 3)))
        xi = np.array([[0.0], [0.1], [0.2], [0.3]])
        with pytest.raises(FitError) as info:
            fit_lsq(FitProblem(s, xi, np.ones((4, 3))))
        assert (3,) in info.value.unconstrained

    def test_fixed_boundary(self, rng):
        truth = _biquadratic(rng)
        xi = parameter_grid(truth, 6)
        X = evaluate(truth, xi) + 0.1
        fitted, _ = fit_lsq(FitProblem(truth, xi, X, fixed_boundary=True))
        np.testing.assert_array_equal(fitted.control_points[0], truth.control_points[0])
        np.testing.assert_array_equal(fitted.control_points[:, -1], truth.control_points[:, -1])

    def test_domain_checked(self, rng):
        with pytest.raises(FitError, match="domain"):
            FitProblem(_biquadratic(rng), [[0.5, 1.5]], [[0, 0, 0]])


class TestFitOpt:
    def test_biquadratic_round_trip(self, rng):
        truth = _biquadratic(rng)
        start = truth.with_control_points(np.zeros_like(truth.control_points))
        xi = parameter_grid(truth, 5)
        fitted, report = fit_opt(FitProblem(start, xi, evaluate(truth, xi)))
        assert residual(fitted, xi, evaluate(truth, xi)) < 1e-8
        assert report.converged

    def test_zero_displacement(self, rng):
        s = _biquadratic(rng)
        xi = parameter_grid(s, 6)
        fitted, _ = fit_opt(FitProblem(s, xi, evaluate(s, xi)))
        np.testing.assert_allclose(fitted.control_points, s.control_points, atol=1e-10)

    def test_agrees_with_lsq(self, rng):
        s = make_random_spline(rng, 2, max_degree=3, rational=True)
        xi = rng.uniform(0, 1, (200, 2))
        X = evaluate(s, xi) + 0.05 * rng.normal(size=(200, 3))
        a, _ = fit_lsq(FitProblem(s, xi, X))
        b, _ = fit_opt(FitProblem(s, xi, X))
        ra, rb = residual(a, xi, X), residual(b, xi, X)
        assert abs(ra - rb) <= 1e-6 * ra

    def test_iteration_cap_warns(self, rng):
        truth = _biquadratic(rng)
        start = truth.with_control_points(np.zeros_like(truth.control_points))
        xi = parameter_grid(truth, 5)
        _, report = fit_opt(FitProblem(start, xi, evaluate(truth, xi)), max_iterations=2)
        assert not report.converged
        assert report.warnings


class TestWeiss:
    def _curve(self):
        return Spline(1, ([0, 0, 0.5, 1, 1],), np.zeros((3, 3)))

    def test_concentrated_span(self):
        xi = np.linspace(0.01, 0.99, 20)[:, None]
        e = np.where(xi[:, 0] > 0.5, 1.0, 0.0)
        d, value = weiss_select_knot(self._curve(), xi, e)
        assert d == 0 and 0.5 < value < 1.0

    def test_symmetric_tie_lowest_span(self):
        xi = np.array([[0.1], [0.25], [0.4], [0.6], [0.75], [0.9]])
        d, value = weiss_select_knot(self._curve(), xi, np.ones(6))
        assert value == pytest.approx(0.25)

    def test_three_to_one_centroid(self):
        xi = np.array([[0.1], [0.2], [0.7]])
        e = np.array([1.0, 2.0, 1.0])  # masses 3 : 1
        _, value = weiss_select_knot(self._curve(), xi, e)
        assert value == pytest.approx((0.1 + 0.4) / 3)

    def test_centroid_clamped(self):
        xi = np.array([[0.001], [0.002], [0.7]])
        _, value = weiss_select_knot(self._curve(), xi, np.array([5.0, 5.0, 1.0]))
        assert value == pytest.approx(0.05)

    def test_zero_errors_rejected(self):
        with pytest.raises(FitError):
            weiss_select_knot(self._curve(), [[0.3]], [0.0])

    def test_direction_policy(self, rng):
        s = _biquadratic(rng)
        xi = rng.uniform(0, 1, (40, 2))
        d, _ = weiss_select_knot(s, xi, rng.uniform(0, 1, 40), direction_policy=1)
        assert d == 1

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.integers(0, 2**16))
    def test_value_inside_span_interior(self, coords, seed):
        rng = np.random.default_rng(seed)
        xi = np.array(coords)[:, None]
        e = rng.uniform(0.1, 1, xi.shape[0])
        for mass, d, j, value in weiss_candidates(self._curve(), xi, e):
            lo, hi = (0.0, 0.5) if j == 0 else (0.5, 1.0)
            assert lo + 0.1 * (hi - lo) - 1e-15 <= value <= hi - 0.1 * (hi - lo) + 1e-15


class TestSplineFit:
    def test_translation_no_refinement(self, rng):
        s = _biquadratic(rng)
        xi = parameter_grid(s, 7)
        X = evaluate(s, xi) + np.array([1.0, -2.0, 0.5])
        fitted, report = spline_fit(FitProblem(s, xi, X), epsilon=1e-8)
        assert report.refinement_log == []
        assert report.final_max_error < 1e-8

    def test_affine_reproduction(self, rng):
        s = _biquadratic(rng)
        xi = parameter_grid(s, 7)
        A = rng.normal(size=(3, 3))
        b = rng.normal(size=3)
        fitted, report = spline_fit(FitProblem(s, xi, evaluate(s, xi) @ A.T + b), epsilon=1e-8)
        expected = transform(s, A, b)
        np.testing.assert_allclose(fitted.control_points, expected.control_points, atol=1e-8)
        assert report.refinement_log == []

    def test_elevation_before_insertion(self):
        s = _planar_patch()
        xi = parameter_grid(s, 12)
        X = evaluate(s, xi)
        X[:, 2] = X[:, 0] ** 3 - X[:, 1] ** 3 + 0.5 * X[:, 0] * X[:, 1] ** 2
        fitted, report = spline_fit(FitProblem(s, xi, X), epsilon=1e-6)
        actions = [a["action"] for a in report.refinement_log]
        assert actions and actions[0] == "elevate"
        if "insert" in actions:
            first_insert = actions.index("insert")
            assert "elevate" not in actions[first_insert:]
        assert report.final_max_error < 1e-6

    def test_epsilon_above_initial(self, rng):
        s = _biquadratic(rng)
        xi = parameter_grid(s, 5)
        X = evaluate(s, xi) + 1e-3
        fitted, report = spline_fit(FitProblem(s, xi, X), epsilon=1.0)
        assert report.refinement_log == [] and fitted is s

    def test_degree_cap_and_monotone(self, rng):
        k = [0, 0, 1, 1]
        s = Spline(1, (k,), [[0, 0, 0], [1, 0, 0]])
        u = np.linspace(0, 1, 60)[:, None]
        X = np.column_stack([u[:, 0], np.sin(6 * u[:, 0]), np.zeros(60)])
        fitted, report = spline_fit(FitProblem(s, u, X), max_degree=3, epsilon=1e-7)
        assert max(a.get("degree", 0) for a in report.refinement_log) <= 3
        assert fitted.degrees[0] <= 3
        # the squared objective never grows once a refinement is applied
        sq = report.squared_history[1:]
        assert all(b <= a * (1 + 1e-9) + 1e-20 for a, b in zip(sq, sq[1:]))

    def test_budget_exhausted(self):
        s = Spline(1, ([0, 0, 1, 1],), [[0, 0, 0], [1, 0, 0]])
        u = np.linspace(0, 1, 200)[:, None]
        X = np.column_stack([u[:, 0], np.sin(40 * u[:, 0]), np.zeros(200)])
        _, report = spline_fit(FitProblem(s, u, X), epsilon=1e-12, budget=3)
        assert not report.converged
        assert len(report.refinement_log) == 3
        assert any("budget" in w for w in report.warnings)

    def test_opt_solver(self, rng):
        s = _biquadratic(rng)
        xi = parameter_grid(s, 7)
        X = evaluate(s, xi) + np.array([0.0, 0.0, 1.0])
        _, report = spline_fit(FitProblem(s, xi, X), epsilon=1e-6, solver="opt")
        assert report.final_max_error < 1e-6


class TestHelpers:
    def test_merge_duplicates(self):
        xi = np.array([[0.1], [0.2], [0.3]])
        X = np.array([[0, 0, 0], [0, 0, 5e-8], [1, 0, 0]], dtype=float)
        p, t, keep = merge_duplicates(xi, X)
        assert keep.tolist() == [True, False, True]
        assert p.shape == (2, 1) and t.shape == (2, 3)

    def test_default_epsilon(self):
        X = np.array([[0, 0, 0], [3, 4, 0]], dtype=float)
        assert default_epsilon(X) == pytest.approx(5e-4)

    def test_pointwise_errors(self):
        s = _planar_patch()
        e = pointwise_errors(s, [[0, 0], [1, 1]], [[0, 0, 1], [1, 1, -3]])
        np.testing.assert_allclose(e, [1, 3])
