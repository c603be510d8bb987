"""Exact functional composition ``T o S`` of a curve or surface into a trivariate Bezier map.

On every knot span of ``S`` the composition is a polynomial (or, for a
rational ``S``, a rational function) of degree ``m_k * (n1 + n2 + n3)`` in
direction ``k``.  It is computed symbolically in Bernstein form:

* the physical coordinates of ``S`` are normalised to ``T``'s parameter box,
  ``u_d = (x_d - a_d) / (b_d - a_d)``, in homogeneous form ``U_d = (X_d - a_d W) / (b_d - a_d)``;
* ``T o S = sum_ijk C_ijk B_i(u_1) B_j(u_2) B_k(u_3)`` is expanded with
  products of Bernstein polynomials, which in the binomially scaled basis
  ``u^i (1-u)^(n-i)`` are plain discrete convolutions;
* for a rational ``S`` the common denominator is ``W^(n1+n2+n3)``, which
  becomes the output weight function.

The per-span pieces are finally stitched into one B-spline whose interior
knot multiplicities keep the continuity of ``S`` at every breakpoint.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import CompositionError
from .spline import (
    Spline,
    _along,
    _from_homogeneous,
    bezier_segments,
    distinct_knots,
)


@dataclass(frozen=True)
class CompositionPlan:
    """Degree and knot bookkeeping for one composition."""

    input_degrees: tuple[int, ...]
    trivariate_degrees: tuple[int, int, int]
    output_degrees: tuple[int, ...]
    output_knots: tuple[np.ndarray, ...]


def _binomials(n: int) -> np.ndarray:
    return np.array([float(comb(n, i)) for i in range(n + 1)])


def output_knot_vector(knots, degree: int, new_degree: int) -> np.ndarray:
    """Knot vector of degree ``new_degree`` with the same breakpoints and continuity.

    A breakpoint of multiplicity ``mu`` (continuity ``C^(degree - mu)``) gets
    multiplicity ``new_degree - degree + mu`` in the output.
    """
    values, mult = distinct_knots(knots)
    q = new_degree
    inner = q - degree + mult[1:-1]
    return np.concatenate([np.full(q + 1, values[0]), np.repeat(values[1:-1], inner), np.full(q + 1, values[-1])])


def plan_composition(trivariate: Spline, spline: Spline) -> CompositionPlan:
    _check_trivariate(trivariate)
    N = sum(trivariate.degrees)
    out_deg = tuple(m * N for m in spline.degrees)
    knots = tuple(output_knot_vector(k, m, q) for k, m, q in zip(spline.knots, spline.degrees, out_deg))
    return CompositionPlan(tuple(spline.degrees), tuple(trivariate.degrees), out_deg, knots)


def _check_trivariate(trivariate: Spline) -> None:
    if trivariate.dim_param != 3:
        raise CompositionError("the deformation map must be trivariate")
    if trivariate.is_rational:
        raise CompositionError("rational trivariate maps are not supported")
    for d, (k, p) in enumerate(zip(trivariate.knots, trivariate.degrees)):
        if k.size != 2 * (p + 1):
            raise CompositionError(f"trivariate has interior knots in direction {d}; a Bezier map is required")


def containment_violations(trivariate: Spline, spline: Spline) -> np.ndarray:
    """Indices (into the flattened control net) of control points outside ``T``'s box."""
    lo = np.array([a for a, _ in trivariate.domain])
    hi = np.array([b for _, b in trivariate.domain])
    P = spline.control_points.reshape(-1, spline.dim_phys)
    if P.shape[1] != 3:
        raise CompositionError("composition needs splines embedded in 3-D space")
    bad = np.any((P < lo) | (P > hi), axis=1)
    return np.flatnonzero(bad)


def check_containment(trivariate: Spline, spline: Spline) -> bool:
    """True iff every control point of ``spline`` lies in ``T``'s closed parameter box."""
    return containment_violations(trivariate, spline).size == 0


# ---------------------------------------------------------------------------
# Bernstein algebra on batches of pieces
# ---------------------------------------------------------------------------
# A polynomial batch is an array (P, d_1+1[, d_2+1], C): P pieces, one axis
# per parametric direction, C components, coefficients in the scaled basis
# u^i (1-u)^(d-i).  Products are full convolutions over the middle axes.


def _mul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Product of a batch ``A`` (any C) with a scalar batch ``B`` (C = 1)."""
    Bs = B[..., 0]
    if A.ndim == 3:
        P, a1, C = A.shape
        b1 = Bs.shape[1]
        out = np.zeros((P, a1 + b1 - 1, C))
        for i in range(a1):
            out[:, i : i + b1] += Bs[:, :, None] * A[:, i, None, :]
        return out
    P, a1, a2, C = A.shape
    b1, b2 = Bs.shape[1:]
    l_out = a2 + b2 - 1
    # Toeplitz form of B along the second axis: Bt[p, r, l, j] = B[p, r, l - j]
    Bt = np.zeros((P, b1, l_out, a2))
    for j in range(a2):
        Bt[:, :, j : j + b2, j] = Bs
    # one batched GEMM for all rows of A, then add the rows along diagonals
    M = np.matmul(Bt.reshape(P, b1 * l_out, a2), A.transpose(0, 2, 1, 3).reshape(P, a2, a1 * C))
    M = M.reshape(P, b1, l_out, a1, C)
    out = np.zeros((P, a1 + b1 - 1, l_out, C))
    for i in range(a1):
        out[:, i : i + b1] += M[:, :, :, i]
    return out


def _one(P: int, dim: int) -> np.ndarray:
    return np.ones((P,) + (1,) * dim + (1,))


def _powers(X: np.ndarray, n: int, dim: int) -> list[np.ndarray]:
    out = [_one(X.shape[0], dim)]
    for _ in range(n):
        out.append(_mul(out[-1], X))
    return out


def _scale(A: np.ndarray, degrees, inverse: bool = False) -> np.ndarray:
    """Convert between Bernstein and binomially scaled coefficients."""
    out = A
    for axis, d in enumerate(degrees, start=1):
        b = _binomials(d)
        if inverse:
            b = 1.0 / b
        shape = [1] * A.ndim
        shape[axis] = d + 1
        out = out * b.reshape(shape)
    return out


def _bernstein_pieces(spline: Spline) -> tuple[np.ndarray, tuple[int, ...]]:
    """Homogeneous Bezier pieces of ``spline``, shape ``(P, m1+1[, m2+1], 4)``."""
    Pw = spline.homogeneous()
    counts = []
    for d in range(spline.dim_param):
        k, p = spline.knots[d], spline.degrees[d]
        seg = _along(Pw, d, lambda flat, k=k, p=p: bezier_segments(k, p, flat).reshape(-1, flat.shape[1]))
        counts.append(seg.shape[d] // (p + 1))
        Pw = seg
    # split every direction into (span, local) and bring span axes to the front
    dim = spline.dim_param
    shape = []
    for d in range(dim):
        shape += [counts[d], spline.degrees[d] + 1]
    Pw = Pw.reshape(tuple(shape) + (Pw.shape[-1],))
    order = [2 * d for d in range(dim)] + [2 * d + 1 for d in range(dim)] + [2 * dim]
    Pw = Pw.transpose(order)
    n_pieces = int(np.prod(counts))
    return Pw.reshape((n_pieces,) + Pw.shape[dim:]), tuple(counts)


def _merge(arr: np.ndarray, axis: int) -> np.ndarray:
    """Join the span axis ``axis`` and local axis ``axis + 1``, sharing joint coefficients."""
    first = np.take(arr, 0, axis=axis)
    rest = np.take(np.take(arr, range(1, arr.shape[axis]), axis=axis), range(1, arr.shape[axis + 1]), axis=axis + 1)
    shape = rest.shape[:axis] + (rest.shape[axis] * rest.shape[axis + 1],) + rest.shape[axis + 2 :]
    return np.concatenate([first, rest.reshape(shape)], axis=axis)


def _stitch(pieces: np.ndarray, counts) -> np.ndarray:
    """Piecewise-Bezier control net (interior multiplicity = degree) from the pieces."""
    dim = len(counts)
    arr = pieces.reshape(tuple(counts) + pieces.shape[1:])
    # interleave to (s1, L1[, s2, L2], K)
    order = [ax for d in range(dim) for ax in (d, dim + d)] + [2 * dim]
    arr = arr.transpose(order)
    for d in range(dim):
        arr = _merge(arr, d)
    return arr


def bezier_to_bspline(B: np.ndarray, breakpoints: np.ndarray, q: int, knots: np.ndarray) -> np.ndarray:
    """Control points on ``knots`` of a piecewise polynomial given in Bezier form.

    ``B`` holds the stitched Bernstein coefficients, ``(n_spans * q + 1, K)``.
    Every B-spline control point is the blossom of one polynomial piece at
    its ``q`` knot arguments.  Arguments equal to the ends of the chosen span
    only shift the coefficient window, so de Casteljau steps are needed just
    for the few arguments outside it.  Exact when the function actually has
    the continuity the knot multiplicities imply.
    """
    t = np.asarray(breakpoints, dtype=float)
    v = np.asarray(knots, dtype=float)
    n = v.size - q - 1
    out = np.empty((n, B.shape[1]))
    for i in range(n):
        args = v[i + 1 : i + q + 1]
        lo_a, hi_a = args[0], args[-1]
        best = None
        for j in range(t.size - 1):
            a, b = t[j], t[j + 1]
            if b < lo_a or a > hi_a or b <= v[i] or a >= v[i + q + 1]:
                continue
            on_a = np.count_nonzero(args == a)
            on_b = np.count_nonzero(args == b)
            z = q - on_a - on_b
            key = (z, float(np.max(np.abs((args - a) / (b - a) - 0.5))))
            if best is None or key < best[0]:
                best = (key, j, on_a, on_b)
        _, j, on_a, on_b = best
        a, b = t[j], t[j + 1]
        sub = B[j * q + on_b : j * q + q - on_a + 1]
        for y in args[(args != a) & (args != b)]:
            s_y = (y - a) / (b - a)
            sub = (1.0 - s_y) * sub[:-1] + s_y * sub[1:]
        out[i] = sub[0]
    return out


def compose(trivariate: Spline, spline: Spline) -> Spline:
    """Exact composition ``T o S``.

    Args:
        trivariate: Polynomial trivariate Bezier map ``T``.
        spline: Curve or surface ``S`` (polynomial or rational) whose control
            points lie inside ``T``'s parameter box.

    Returns:
        A spline of degrees ``m_k * (n1 + n2 + n3)`` on the breakpoints of
        ``S`` with ``S``'s continuity.  Rational exactly when ``S`` is.

    Raises:
        CompositionError: On a rational or multi-span ``T``, on a
            discontinuous ``S``, or when a control point of ``S`` lies
            outside ``T``'s box.
    """
    plan = plan_composition(trivariate, spline)
    if spline.dim_param not in (1, 2):
        raise CompositionError("only curves and surfaces can be composed")
    bad = containment_violations(trivariate, spline)
    if bad.size:
        idx = np.unravel_index(bad[0], spline.shape)
        pt = spline.control_points[idx]
        raise CompositionError(f"control point {tuple(int(i) for i in idx)} = {pt.tolist()} lies outside the map's domain")
    for d in range(spline.dim_param):
        if np.any(distinct_knots(spline.knots[d])[1][1:-1] > spline.degrees[d]):
            raise CompositionError("discontinuous splines (interior multiplicity > degree) are not supported")

    dim = spline.dim_param
    m = spline.degrees
    pieces, counts = _bernstein_pieces(spline)
    scaled = _scale(pieces, m)
    W = scaled[..., 3:4]
    n = trivariate.degrees
    basis = []
    for d in range(3):
        a, b = trivariate.domain[d]
        U = (scaled[..., d : d + 1] - a * W) / (b - a)
        V = W - U
        pu, pv = _powers(U, n[d], dim), _powers(V, n[d], dim)
        basis.append([comb(n[d], i) * _mul(pu[i], pv[n[d] - i]) for i in range(n[d] + 1)])

    C = trivariate.control_points
    F = None
    for i in range(n[0] + 1):
        G = None
        for j in range(n[1] + 1):
            H = sum(basis[2][k] * C[i, j, k] for k in range(n[2] + 1))
            term = _mul(H, basis[1][j])
            G = term if G is None else G + term
        term = _mul(G, basis[0][i])
        F = term if F is None else F + term

    q = plan.output_degrees
    if spline.is_rational:
        Wn = _powers(W, sum(n), dim)[-1]
    else:
        Wn = _scale(np.ones((F.shape[0],) + tuple(d + 1 for d in q) + (1,)), q)
    out = _scale(np.concatenate([F, Wn], axis=-1), q, inverse=True)

    Pw = _stitch(out, counts)
    for d in range(dim):
        t = distinct_knots(spline.knots[d])[0]
        Pw = _along(Pw, d, lambda flat, t=t, d=d: bezier_to_bspline(flat, t, q[d], plan.output_knots[d]))
    return _from_homogeneous(q, plan.output_knots, Pw, spline.is_rational)


def identity_trivariate(lo, hi, degrees=(1, 1, 1)) -> Spline:
    """Bezier map that is the identity on the box ``[lo, hi]``.

    Control points sit at the Greville points of the box, which reproduces
    linear functions exactly at every degree.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    knots = tuple(np.r_[np.full(p + 1, lo[d]), np.full(p + 1, hi[d])] for d, p in enumerate(degrees))
    axes = [np.linspace(lo[d], hi[d], p + 1) for d, p in enumerate(degrees)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return Spline(tuple(degrees), knots, grid)
