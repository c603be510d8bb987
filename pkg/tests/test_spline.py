"""Spline kernel: evaluation, derivatives, refinement, reduction."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cadrecon.errors import DomainError, RefinementError, SplineError
from cadrecon.settings import configure, get_settings
from cadrecon.spline import (
    KnotVector,
    Spline,
    basis_functions,
    bezier_segments,
    collocation_matrix,
    derivative,
    distinct_knots,
    elevate_degree,
    evaluate,
    extract,
    greville_abscissae,
    insert_knot,
    jacobian,
    parameter_grid,
    reduce_degree,
    refine,
    same_geometry,
    transform,
)
from conftest import make_random_spline
from oracles import basis_row, brute_evaluate, grid


class TestKnotVector:
    def test_clamped_accepted(self):
        kv = KnotVector([0, 0, 0, 0.5, 1, 1, 1], 2)
        assert kv.n == 4
        assert kv.domain == (0.0, 1.0)
        assert kv.multiplicity(0.5) == 1

    @pytest.mark.parametrize(
        "knots, degree",
        [
            ([0, 0.2, 0.5, 1, 1, 1], 2),  # unclamped start
            ([0, 0, 0, 1, 0.5, 1, 1], 2),  # decreasing
            ([0, 0, 0, 0.5, 0.5, 0.5, 0.5, 1, 1, 1], 2),  # interior multiplicity p+2
            ([0, 0, 1], 1),  # too short
            ([1, 1, 1, 1], 1),  # empty range
        ],
    )
    def test_invalid_rejected(self, knots, degree):
        with pytest.raises(SplineError):
            KnotVector(knots, degree)

    def test_net_shape_mismatch(self):
        with pytest.raises(SplineError, match="control net shape"):
            Spline(2, ([0, 0, 0, 1, 1, 1],), np.zeros((4, 3)))

    def test_nonpositive_weights(self):
        with pytest.raises(SplineError, match="positive"):
            Spline(1, ([0, 0, 1, 1],), np.zeros((2, 3)), [1.0, 0.0])


class TestEvaluate:
    def test_line_midpoint(self, line_curve):
        np.testing.assert_array_equal(evaluate(line_curve, 0.5), [1.0, 0.0, 0.0])

    def test_quadratic_matches_cox_de_boor(self, rng):
        knots = np.array([0, 0, 0, 1, 2, 3, 3, 3], dtype=float)
        P = rng.uniform(-1, 1, (5, 3))
        s = Spline(2, (knots,), P)
        expected = brute_evaluate((2,), (knots,), P, None, [1.5])
        np.testing.assert_allclose(evaluate(s, 1.5), expected, rtol=0, atol=1e-14)

    @pytest.mark.parametrize("dim", [1, 2, 3])
    def test_clamped_corner_interpolation(self, rng, dim):
        s = make_random_spline(rng, dim, rational=True)
        lo = [a for a, _ in s.domain]
        hi = [b for _, b in s.domain]
        np.testing.assert_allclose(evaluate(s, lo), s.control_points[(0,) * dim], rtol=0, atol=1e-12)
        np.testing.assert_allclose(evaluate(s, hi), s.control_points[(-1,) * dim], rtol=0, atol=1e-12)

    def test_domain_error_names_direction(self, rng):
        s = make_random_spline(rng, 2)
        with pytest.raises(DomainError) as info:
            evaluate(s, [0.5, 1.5])
        assert info.value.direction == 1
        assert "direction 1" in str(info.value)

    def test_partition_of_unity(self, rng):
        s = make_random_spline(rng, 2, rational=False)
        tags = s.with_control_points(np.ones(s.shape + (3,)))
        np.testing.assert_allclose(evaluate(tags, parameter_grid(s, 13)), 1.0, rtol=0, atol=1e-12)

    def test_basis_against_recursion(self, rng):
        knots = np.array([0, 0, 0, 0, 0.3, 0.3, 0.7, 1, 1, 1, 1], dtype=float)
        u = np.concatenate([rng.uniform(0, 1, 50), [0.0, 0.3, 0.7, 1.0]])
        B = collocation_matrix(knots, 3, u)
        oracle = np.array([basis_row(knots, 3, x) for x in u])
        np.testing.assert_allclose(B, oracle, rtol=0, atol=1e-14)
        spans, N = basis_functions(knots, 3, u)
        np.testing.assert_allclose(N.sum(axis=1), 1.0, atol=1e-14)

    @given(st.integers(0, 2**32 - 1))
    def test_random_against_oracle(self, seed):
        rng = np.random.default_rng(seed)
        dim = int(rng.integers(1, 4))
        s = make_random_spline(rng, dim, max_degree=3, max_spans=2)
        xi = rng.uniform(0, 1, (4, dim))
        got = evaluate(s, xi)
        for x, g in zip(xi, got):
            ref = brute_evaluate(s.degrees, s.knots, s.control_points, s.weights, x)
            np.testing.assert_allclose(g, ref, rtol=1e-12, atol=1e-12 * np.abs(ref).max())


class TestDerivative:
    def test_line_speed(self, line_curve):
        np.testing.assert_allclose(derivative(line_curve, 0.3, 0), [2.0, 0.0, 0.0])

    def test_order_above_degree_is_zero(self, rng):
        s = make_random_spline(rng, 2, rational=False)
        d = derivative(s, [0.4, 0.6], 0, s.degrees[0] + 1)
        np.testing.assert_array_equal(d, np.zeros(3))

    @pytest.mark.parametrize("rational", [False, True])
    def test_finite_differences(self, rng, rational):
        ku = np.array([0, 0, 0, 0, 0.4, 1, 1, 1, 1], dtype=float)
        kv = np.array([0, 0, 0, 0, 1, 1, 1, 1], dtype=float)
        P = rng.uniform(-1, 1, (5, 4, 3))
        W = rng.uniform(0.5, 2, (5, 4)) if rational else None
        s = Spline((3, 3), (ku, kv), P, W)
        h = 1e-6
        for xi in rng.uniform(0.1, 0.9, (10, 2)):
            for d in range(2):
                e = np.zeros(2)
                e[d] = h
                fd = (evaluate(s, xi + e) - evaluate(s, xi - e)) / (2 * h)
                an = derivative(s, xi, d)
                assert np.linalg.norm(an - fd) <= 1e-5 * max(np.linalg.norm(an), 1.0)

    def test_second_derivative_of_parabola(self):
        # x(u) = u, y(u) = u^2 as a quadratic Bezier
        s = Spline(2, ([0, 0, 0, 1, 1, 1],), [[0, 0, 0], [0.5, 0, 0], [1, 1, 0]])
        np.testing.assert_allclose(derivative(s, 0.3, 0, 2), [0, 2, 0], atol=1e-13)

    def test_jacobian_columns(self, rng):
        s = make_random_spline(rng, 3, rational=True)
        xi = rng.uniform(0, 1, (5, 3))
        S, J = jacobian(s, xi)
        np.testing.assert_allclose(S, evaluate(s, xi), atol=1e-12)
        for d in range(3):
            np.testing.assert_allclose(J[..., d], derivative(s, xi, d), atol=1e-10)


class TestGreville:
    def test_bezier_quadratic(self):
        np.testing.assert_allclose(greville_abscissae([0, 0, 0, 1, 1, 1], 2), [0, 0.5, 1])

    def test_two_span_quadratic(self):
        np.testing.assert_allclose(greville_abscissae([0, 0, 0, 1, 2, 2, 2], 2), [0, 0.5, 1.5, 2])

    def test_linear_equals_knots(self):
        knots = [0, 0, 0.2, 0.7, 1, 1]
        np.testing.assert_allclose(greville_abscissae(knots, 1), [0, 0.2, 0.7, 1])

    def test_degree_zero_rejected(self):
        with pytest.raises(SplineError):
            greville_abscissae([0, 1], 0)

    def test_count_matches_net(self):
        kv = KnotVector([0, 0, 0, 0, 0.2, 0.5, 0.5, 1, 1, 1, 1], 3)
        assert greville_abscissae(kv).size == kv.n


class TestInsertKnot:
    def test_line_midpoint(self, line_curve):
        s = insert_knot(line_curve, 0, 0.5)
        np.testing.assert_allclose(s.control_points, [[0, 0, 0], [1, 0, 0], [2, 0, 0]])
        u = np.linspace(0, 1, 11)
        np.testing.assert_allclose(evaluate(s, u), evaluate(line_curve, u), atol=1e-15)

    def test_random_cubic_surface(self, rng):
        s = make_random_spline(rng, 2, rational=True)
        ku = np.array([0, 0, 0, 0, 0.5, 1, 1, 1, 1], dtype=float)
        s = Spline((3, 3), (ku, ku), rng.uniform(-5, 5, (5, 5, 3)), rng.uniform(0.5, 2, (5, 5)))
        t = insert_knot(s, 1, 0.3141)
        g = grid(s.domain, (10, 10))
        assert np.abs(evaluate(s, g) - evaluate(t, g)).max() < 1e-12
        assert t.shape == (5, 6)

    def test_up_to_full_multiplicity(self, rng):
        s = make_random_spline(rng, 1, max_degree=3, rational=False)
        p = s.degrees[0]
        existing = s.knots[0][p + 1] if s.knots[0].size > 2 * p + 2 else 0.5
        m = s.knot_vector(0).multiplicity(existing)
        t = insert_knot(s, 0, existing, p - m) if p > m else s
        assert t.knot_vector(0).multiplicity(existing) == p
        assert same_geometry(s, t) < 1e-12

    def test_overflow(self, line_curve):
        with pytest.raises(RefinementError):
            insert_knot(line_curve, 0, 0.5, 2)

    def test_outside_domain(self, line_curve):
        with pytest.raises(SplineError):
            insert_knot(line_curve, 0, 1.5)

    def test_refine_many(self, rng):
        s = make_random_spline(rng, 2, rational=True)
        t = refine(s, 0, rng.uniform(0.05, 0.95, 7))
        assert same_geometry(s, t) < 1e-12


class TestElevate:
    def test_line(self, line_curve):
        s = elevate_degree(line_curve, 0)
        assert s.degrees == (2,)
        np.testing.assert_allclose(s.control_points, [[0, 0, 0], [1, 0, 0], [2, 0, 0]], atol=1e-15)

    def test_biquadratic_twice(self, rng):
        k = np.array([0, 0, 0, 0.5, 1, 1, 1], dtype=float)
        s = Spline((2, 2), (k, k), rng.uniform(-1, 1, (4, 4, 3)), rng.uniform(0.5, 2, (4, 4)))
        t = elevate_degree(s, 0, 2)
        assert t.degrees == (4, 2)
        g = grid(s.domain, (25, 25))
        assert np.abs(evaluate(s, g) - evaluate(t, g)).max() < 1e-12

    def test_bezier_stays_single_span(self, rng):
        s = Spline(3, ([0, 0, 0, 0, 1, 1, 1, 1],), rng.uniform(-1, 1, (4, 3)))
        t = elevate_degree(s, 0, 3)
        assert distinct_knots(t.knots[0])[0].size == 2
        assert t.shape == (7,)

    def test_interior_multiplicity_grows(self):
        s = Spline(2, ([0, 0, 0, 0.5, 1, 1, 1],), np.eye(4, 3))
        t = elevate_degree(s, 0)
        assert t.knot_vector(0).multiplicity(0.5) == 2


class TestReduce:
    def test_degree_one_rejected(self, line_curve):
        with pytest.raises(RefinementError):
            reduce_degree(line_curve, 0)

    def test_elevation_round_trip(self, rng):
        for _ in range(10):
            s = make_random_spline(rng, 1, max_degree=3)
            back, err = reduce_degree(elevate_degree(s, 0), 0)
            assert back.degrees == s.degrees
            assert err < 1e-10
            assert same_geometry(s, back) < 1e-10

    def test_quartic_error_estimate(self, rng):
        s = Spline(4, ([0, 0, 0, 0, 0, 1, 1, 1, 1, 1],), rng.uniform(-1, 1, (5, 3)))
        r, err = reduce_degree(s, 0)
        u = np.linspace(0, 1, 1000)
        measured = np.linalg.norm(evaluate(s, u) - evaluate(r, u), axis=1).max()
        assert err > 0
        assert measured / 2 <= err <= 2 * measured


class TestMisc:
    def test_extract_restricts(self, rng):
        s = make_random_spline(rng, 2, rational=True)
        t = extract(s, 0, 0.2, 0.7)
        assert t.domain[0] == (0.2, 0.7)
        g = grid(t.domain, (9, 9))
        np.testing.assert_allclose(evaluate(t, g), evaluate(s, g), atol=1e-12)

    def test_bezier_segments_cover_curve(self, rng):
        knots = np.array([0, 0, 0, 0, 0.4, 1, 1, 1, 1])
        P = rng.uniform(-1, 1, (5, 3))
        segs = bezier_segments(knots, 3, P)
        assert segs.shape[0] == 2
        bez = Spline(3, ([0, 0, 0, 0, 1, 1, 1, 1],), segs[1])
        np.testing.assert_allclose(evaluate(bez, 0.5), evaluate(Spline(3, (knots,), P), 0.7), atol=1e-13)

    def test_transform_affine(self, rng):
        s = make_random_spline(rng, 2, rational=True)
        A = rng.normal(size=(3, 3))
        b = rng.normal(size=3)
        t = transform(s, A, b)
        g = parameter_grid(s, 7)
        np.testing.assert_allclose(evaluate(t, g), evaluate(s, g) @ A.T + b, atol=1e-10)

    def test_settings_configurable(self):
        old = get_settings()
        try:
            assert configure(param_tol=1e-9).param_tol == 1e-9
        finally:
            configure(param_tol=old.param_tol)
