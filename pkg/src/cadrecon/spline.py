"""Tensor-product B-spline / NURBS kernel.

A :class:`Spline` is an immutable value: degrees, one clamped knot vector per
parametric direction, a control net of physical points and optional positive
weights.  Curves, surfaces and trivariates share the same code path; every
operation works along one parametric direction at a time by treating the
remaining directions as extra coordinates of the control points.

Rational splines are handled in homogeneous coordinates (``w*P, w``) for all
refinement operators, so weights are transformed consistently with the
geometry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, RefinementError, SplineError
from .settings import get_settings

__all__ = [
    "KnotVector",
    "Spline",
    "basis_functions",
    "basis_derivatives",
    "collocation_matrix",
    "derivative",
    "distinct_knots",
    "elevate_degree",
    "evaluate",
    "extract",
    "find_spans",
    "greville_abscissae",
    "insert_knot",
    "jacobian",
    "parameter_grid",
    "reduce_degree",
    "refine",
    "transform",
]

# Work-array budget (floats) for chunked tensor contractions.
_CHUNK_FLOATS = 4_000_000


# ---------------------------------------------------------------------------
# Knot vectors
# ---------------------------------------------------------------------------


def _validated_knots(knots, degree: int) -> np.ndarray:
    k = np.array(knots, dtype=float).reshape(-1)
    if degree < 0:
        raise SplineError("degree must be non-negative")
    if not np.all(np.isfinite(k)):
        raise SplineError("knots must be finite")
    if k.size < 2 * degree + 2:
        raise SplineError(f"need at least {2 * degree + 2} knots for degree {degree}")
    if np.any(np.diff(k) < 0):
        raise SplineError("knots must be non-decreasing")
    if not k[-1] > k[0]:
        raise SplineError("knot vector spans an empty parameter range")
    p = degree
    if k[p] != k[0] or k[-p - 1] != k[-1]:
        raise SplineError("knot vector is not clamped (end multiplicity must be degree + 1)")
    if k[p + 1] == k[0] or k[-p - 2] == k[-1]:
        raise SplineError("end knot multiplicity exceeds degree + 1")
    _, mults = distinct_knots(k)
    if np.any(mults > p + 1):
        raise SplineError("interior knot multiplicity exceeds degree + 1")
    k.setflags(write=False)
    return k


def distinct_knots(knots) -> tuple[np.ndarray, np.ndarray]:
    """Return the distinct knot values and their multiplicities."""
    k = np.asarray(knots, dtype=float)
    values, counts = np.unique(k, return_counts=True)
    return values, counts


@dataclass(frozen=True, eq=False)
class KnotVector:
    """A clamped knot vector together with its degree."""

    knots: np.ndarray
    degree: int

    def __post_init__(self):
        object.__setattr__(self, "degree", int(self.degree))
        object.__setattr__(self, "knots", _validated_knots(self.knots, self.degree))

    @property
    def n(self) -> int:
        """Number of control points (basis functions)."""
        return self.knots.size - self.degree - 1

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    def breakpoints(self) -> np.ndarray:
        return distinct_knots(self.knots)[0]

    def multiplicity(self, value: float) -> int:
        return int(np.count_nonzero(self.knots == value))


def greville_abscissae(knot_vector, degree: int | None = None) -> np.ndarray:
    """Greville abscissae ``(1/p) * sum(knots[a+1 : a+p+1])``, one per control point.

    Accepts a :class:`KnotVector` or a raw knot array plus ``degree``.
    """
    if isinstance(knot_vector, KnotVector):
        knots, p = knot_vector.knots, knot_vector.degree
    else:
        if degree is None:
            raise SplineError("degree required for a raw knot array")
        knots, p = np.asarray(knot_vector, dtype=float), int(degree)
    if p == 0:
        raise SplineError("Greville abscissae are undefined for degree 0")
    n = knots.size - p - 1
    csum = np.concatenate([[0.0], np.cumsum(knots)])
    a = np.arange(n)
    g = (csum[a + p + 1] - csum[a + 1]) / p
    # guard the clamped ends against summation round-off
    g[0], g[-1] = knots[0], knots[-1]
    return g


# ---------------------------------------------------------------------------
# Basis functions (vectorised over parameter values)
# ---------------------------------------------------------------------------


def find_spans(knots: np.ndarray, degree: int, u: np.ndarray) -> np.ndarray:
    """Index ``i`` with ``knots[i] <= u < knots[i+1]`` (last span closed)."""
    n = knots.size - degree - 1
    spans = np.searchsorted(knots, u, side="right") - 1
    return np.clip(spans, degree, n - 1)


def basis_functions(knots: np.ndarray, degree: int, u) -> tuple[np.ndarray, np.ndarray]:
    """Non-zero basis functions at each ``u``.

    Returns:
        ``(spans, N)`` where ``N[j, r]`` is the value of basis function
        ``spans[j] - degree + r`` at ``u[j]``.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    p = degree
    spans = find_spans(knots, p, u)
    m = u.size
    N = np.zeros((m, p + 1))
    N[:, 0] = 1.0
    left = np.empty((m, p + 1))
    right = np.empty((m, p + 1))
    for j in range(1, p + 1):
        left[:, j] = u - knots[spans + 1 - j]
        right[:, j] = knots[spans + j] - u
        saved = np.zeros(m)
        for r in range(j):
            temp = N[:, r] / (right[:, r + 1] + left[:, j - r])
            N[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        N[:, j] = saved
    return spans, N


def basis_derivatives(
    knots: np.ndarray, degree: int, u, order: int
) -> tuple[np.ndarray, np.ndarray]:
    """Basis functions and their derivatives up to ``order``.

    Returns:
        ``(spans, D)`` with ``D[j, k, r]`` the ``k``-th derivative of basis
        function ``spans[j] - degree + r`` at ``u[j]``.  Orders above the
        degree are identically zero.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    p = degree
    m = u.size
    spans = find_spans(knots, p, u)
    ders = np.zeros((m, order + 1, p + 1))
    ndu = np.zeros((m, p + 1, p + 1))
    ndu[:, 0, 0] = 1.0
    left = np.empty((m, p + 1))
    right = np.empty((m, p + 1))
    for j in range(1, p + 1):
        left[:, j] = u - knots[spans + 1 - j]
        right[:, j] = knots[spans + j] - u
        saved = np.zeros(m)
        for r in range(j):
            ndu[:, j, r] = right[:, r + 1] + left[:, j - r]
            temp = ndu[:, r, j - 1] / ndu[:, j, r]
            ndu[:, r, j] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        ndu[:, j, j] = saved
    ders[:, 0, :] = ndu[:, :, p]
    top = min(order, p)
    for r in range(p + 1):
        a = np.zeros((2, m, p + 1))
        a[0, :, 0] = 1.0
        s1, s2 = 0, 1
        for k in range(1, top + 1):
            d = np.zeros(m)
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, :, 0] = a[s1, :, 0] / ndu[:, pk + 1, rk]
                d = a[s2, :, 0] * ndu[:, rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, :, j] = (a[s1, :, j] - a[s1, :, j - 1]) / ndu[:, pk + 1, rk + j]
                d = d + a[s2, :, j] * ndu[:, rk + j, pk]
            if r <= pk:
                a[s2, :, k] = -a[s1, :, k - 1] / ndu[:, pk + 1, r]
                d = d + a[s2, :, k] * ndu[:, r, pk]
            ders[:, k, r] = d
            s1, s2 = s2, s1
    factor = p
    for k in range(1, top + 1):
        ders[:, k, :] *= factor
        factor *= p - k
    return spans, ders


def collocation_matrix(knots: np.ndarray, degree: int, u) -> np.ndarray:
    """Dense matrix ``B[j, i] = N_i(u[j])`` of all basis functions."""
    spans, N = basis_functions(knots, degree, u)
    n = knots.size - degree - 1
    B = np.zeros((spans.size, n))
    cols = spans[:, None] - degree + np.arange(degree + 1)
    np.put_along_axis(B, cols, N, axis=1)
    return B


# ---------------------------------------------------------------------------
# Spline value type
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Spline:
    """Tensor-product B-spline or NURBS mapping.

    Args:
        degrees: One degree per parametric direction (an int is accepted for
            curves).
        knots: One clamped knot vector per parametric direction.
        control_points: Array of shape ``(*n, dim_phys)`` where ``n[d]`` is
            the number of control points in direction ``d``.
        weights: Optional array of shape ``n`` with strictly positive values.
            ``None`` means a polynomial B-spline.
    """

    degrees: tuple[int, ...]
    knots: tuple[np.ndarray, ...]
    control_points: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        degrees = tuple(int(p) for p in np.atleast_1d(self.degrees))
        knots_in = self.knots
        if len(degrees) == 1 and np.ndim(knots_in[0]) == 0:
            knots_in = (knots_in,)
        if len(knots_in) != len(degrees):
            raise SplineError("need exactly one knot vector per degree")
        if not 1 <= len(degrees) <= 3:
            raise SplineError("only curves, surfaces and trivariates are supported")
        knots = tuple(_validated_knots(k, p) for k, p in zip(knots_in, degrees))
        shape = tuple(k.size - p - 1 for k, p in zip(knots, degrees))
        cp = np.array(self.control_points, dtype=float)
        if cp.ndim != len(shape) + 1 or cp.shape[:-1] != shape:
            raise SplineError(
                f"control net shape {cp.shape} does not match knot/degree layout {shape}"
            )
        if not np.all(np.isfinite(cp)):
            raise SplineError("control points must be finite")
        cp.setflags(write=False)
        w = self.weights
        if w is not None:
            w = np.array(w, dtype=float)
            if w.shape != shape:
                raise SplineError(f"weights shape {w.shape} does not match control net {shape}")
            if not np.all(w > 0):
                raise SplineError("weights must be strictly positive")
            w.setflags(write=False)
        object.__setattr__(self, "degrees", degrees)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "control_points", cp)
        object.__setattr__(self, "weights", w)

    # -- structure ---------------------------------------------------------

    @property
    def dim_param(self) -> int:
        return len(self.degrees)

    @property
    def dim_phys(self) -> int:
        return self.control_points.shape[-1]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.control_points.shape[:-1]

    @property
    def is_rational(self) -> bool:
        return self.weights is not None

    @property
    def domain(self) -> tuple[tuple[float, float], ...]:
        return tuple((float(k[0]), float(k[-1])) for k in self.knots)

    def knot_vector(self, direction: int) -> KnotVector:
        return KnotVector(self.knots[direction], self.degrees[direction])

    def homogeneous(self) -> np.ndarray:
        """Control net in homogeneous coordinates, shape ``(*n, dim_phys + 1)``."""
        if self.weights is None:
            ones = np.ones(self.shape + (1,))
            return np.concatenate([self.control_points, ones], axis=-1)
        w = self.weights[..., None]
        return np.concatenate([self.control_points * w, w], axis=-1)

    def with_control_points(self, control_points) -> "Spline":
        return Spline(self.degrees, self.knots, control_points, self.weights)

    def __call__(self, at):
        return evaluate(self, at)

    def __repr__(self) -> str:
        kind = "NURBS" if self.is_rational else "BSpline"
        return f"{kind}(degrees={self.degrees}, shape={self.shape}, dim_phys={self.dim_phys})"


def _from_homogeneous(degrees, knots, Pw: np.ndarray, rational: bool) -> Spline:
    if rational:
        w = Pw[..., -1]
        return Spline(degrees, knots, Pw[..., :-1] / w[..., None], w)
    return Spline(degrees, knots, Pw[..., :-1])


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _as_params(spline: Spline, at) -> tuple[np.ndarray, bool]:
    """Normalise parameters to an ``(m, dim_param)`` array, checking the domain."""
    a = np.asarray(at, dtype=float)
    dim = spline.dim_param
    single = False
    if a.ndim == 0:
        if dim != 1:
            raise DomainError(0, float(a), *spline.domain[0])
        a = a.reshape(1, 1)
        single = True
    elif a.ndim == 1:
        if dim == 1 and a.size != 1:
            a = a.reshape(-1, 1)
        else:
            if a.size != dim:
                raise SplineError(f"expected {dim} parametric coordinates, got {a.size}")
            a = a.reshape(1, dim)
            single = True
    elif a.ndim != 2 or a.shape[1] != dim:
        raise SplineError(f"parameters must have shape (m, {dim})")
    a = np.array(a)
    tol = get_settings().param_tol
    for d, (lo, hi) in enumerate(spline.domain):
        col = a[:, d]
        slack = tol * (hi - lo)
        bad = (col < lo - slack) | (col > hi + slack) | ~np.isfinite(col)
        if np.any(bad):
            raise DomainError(d, float(col[np.argmax(bad)]), lo, hi)
        np.clip(col, lo, hi, out=col)
    return a, single


def _contract(Pw: np.ndarray, degrees, spans, bases) -> np.ndarray:
    """Sum ``prod_d bases[d][j, r_d] * Pw[spans[d][j] - p_d + r_d, ...]`` per point."""
    dim = len(degrees)
    m = spans[0].size
    K = Pw.shape[-1]
    local = int(np.prod([p + 1 for p in degrees]))
    chunk = max(1, _CHUNK_FLOATS // (local * K))
    out = np.empty((m, K))
    for s in range(0, m, chunk):
        sl = slice(s, min(m, s + chunk))
        mc = sl.stop - sl.start
        idx = []
        for d, p in enumerate(degrees):
            off = spans[d][sl, None] - p + np.arange(p + 1)
            shp = [mc] + [1] * dim
            shp[1 + d] = p + 1
            idx.append(off.reshape(shp))
        G = Pw[tuple(idx)]
        for d in range(dim):
            G = np.einsum("mi...,mi->m...", G, bases[d][sl])
        out[sl] = G
    return out


def _homogeneous_values(spline: Spline, params: np.ndarray, direction=None, order=0):
    """Homogeneous derivatives ``d^k/du_dir^k`` for ``k = 0..order`` -> ``(order+1, m, K)``."""
    Pw = spline.homogeneous()
    spans, rows = [], []
    for d, (k, p) in enumerate(zip(spline.knots, spline.degrees)):
        if d == direction and order > 0:
            s, D = basis_derivatives(k, p, params[:, d], order)
        else:
            s, N = basis_functions(k, p, params[:, d])
            D = N[:, None, :]
        spans.append(s)
        rows.append(D)
    nout = order + 1 if direction is not None else 1
    out = np.empty((nout, params.shape[0], Pw.shape[-1]))
    for k in range(nout):
        bases = [r[:, k if d == direction else 0, :] for d, r in enumerate(rows)]
        out[k] = _contract(Pw, spline.degrees, spans, bases)
    return out


def evaluate(spline: Spline, at) -> np.ndarray:
    """Evaluate the spline mapping.

    Args:
        spline: The spline.
        at: A single parametric point (scalar for curves) or an ``(m, dim_param)``
            array of points.

    Returns:
        Physical point(s): shape ``(dim_phys,)`` for a single point, else
        ``(m, dim_phys)``.

    Raises:
        DomainError: If a parameter lies outside its knot span.
    """
    params, single = _as_params(spline, at)
    H = _homogeneous_values(spline, params)[0]
    pts = H[:, :-1] / H[:, -1:] if spline.is_rational else H[:, :-1]
    return pts[0] if single else pts


def derivative(spline: Spline, at, direction: int, order: int = 1) -> np.ndarray:
    """Partial derivative ``d^order S / d(param[direction])^order``.

    Orders above the degree of a polynomial spline return zero vectors.
    Rational splines use the quotient rule on homogeneous derivatives.
    """
    if order < 0:
        raise SplineError("derivative order must be non-negative")
    params, single = _as_params(spline, at)
    H = _homogeneous_values(spline, params, direction, order)
    A, w = H[..., :-1], H[..., -1]
    if not spline.is_rational:
        out = A[order]
    else:
        C = [A[0] / w[0][:, None]]
        for k in range(1, order + 1):
            v = A[k].copy()
            for i in range(1, k + 1):
                v -= math.comb(k, i) * w[i][:, None] * C[k - i]
            C.append(v / w[0][:, None])
        out = C[order]
    return out[0] if single else out


def jacobian(spline: Spline, at) -> tuple[np.ndarray, np.ndarray]:
    """Point values and first partials: ``(S, J)`` with ``J[j, :, d] = dS/du_d``."""
    params, single = _as_params(spline, at)
    cols = []
    value = None
    for d in range(spline.dim_param):
        H = _homogeneous_values(spline, params, d, 1)
        A, w = H[..., :-1], H[..., -1]
        if spline.is_rational:
            S = A[0] / w[0][:, None]
            dS = (A[1] - w[1][:, None] * S) / w[0][:, None]
        else:
            S, dS = A[0], A[1]
        value = S
        cols.append(dS)
    J = np.stack(cols, axis=-1)
    if single:
        return value[0], J[0]
    return value, J


def parameter_grid(spline: Spline, counts) -> np.ndarray:
    """Uniform tensor grid over the domain, flattened to ``(prod(counts), dim_param)``."""
    counts = np.broadcast_to(np.atleast_1d(counts), (spline.dim_param,))
    axes = [np.linspace(lo, hi, int(c)) for (lo, hi), c in zip(spline.domain, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.reshape(-1) for g in mesh], axis=-1)


def transform(spline: Spline, matrix=None, offset=None) -> Spline:
    """Affine image ``x -> matrix @ x + offset`` (exact for B-splines and NURBS)."""
    P = spline.control_points
    if matrix is not None:
        P = P @ np.asarray(matrix, dtype=float).T
    if offset is not None:
        P = P + np.asarray(offset, dtype=float)
    return spline.with_control_points(P)


# ---------------------------------------------------------------------------
# Blossom-based change of basis (refinement, elevation, extraction)
# ---------------------------------------------------------------------------


def _along(Pw: np.ndarray, axis: int, fn) -> np.ndarray:
    """Apply a curve routine ``(n, K) -> (n', K)`` along one axis of a control net."""
    moved = np.moveaxis(Pw, axis, 0)
    rest = moved.shape[1:]
    flat = moved.reshape(moved.shape[0], -1)
    res = fn(flat)
    return np.moveaxis(res.reshape((res.shape[0],) + rest), 0, axis)


def _blossom(knots: np.ndarray, p: int, P: np.ndarray, spans: np.ndarray, args: np.ndarray):
    """Blossom of the polynomial piece on ``spans[j]`` evaluated at ``args[j]``.

    ``P`` is ``(n, K)``; ``args`` is ``(M, p)``.  De Boor's triangle with a
    different abscissa on every level.
    """
    if p == 0:
        return P[spans]
    d = P[spans[:, None] - p + np.arange(p + 1)]
    for r in range(1, p + 1):
        y = args[:, r - 1]
        for t in range(p, r - 1, -1):
            k = spans - p + t
            alpha = ((y - knots[k]) / (knots[k + p + 1 - r] - knots[k]))[:, None]
            d[:, t] = (1.0 - alpha) * d[:, t - 1] + alpha * d[:, t]
    return d[:, p]


def _respline(knots: np.ndarray, p: int, P: np.ndarray, new_knots: np.ndarray, q: int):
    """Control points of the same function on ``new_knots`` at degree ``q``.

    Valid when every polynomial piece of the new space is a piece of the old
    function (refinement, one-step elevation ``q = p + 1``, or restriction to
    a sub-interval whose interior knots are old knots).
    """
    if q not in (p, p + 1):
        raise RefinementError("only same-degree or one-step elevation changes are exact here")
    v = np.asarray(new_knots, dtype=float)
    n_new = v.size - q - 1
    # pick, for each new basis function, the non-empty span in its support
    # nearest to the centre of the support
    j_choice = np.empty(n_new, dtype=int)
    for i in range(n_new):
        cand = np.arange(i, i + q + 1)
        ok = v[cand + 1] > v[cand]
        cand = cand[ok]
        j_choice[i] = cand[np.argmin(np.abs(cand - (i + q / 2.0)))]
    mids = 0.5 * (v[j_choice] + v[j_choice + 1])
    spans = find_spans(knots, p, mids)
    args = np.lib.stride_tricks.sliding_window_view(v[1:], q)[:n_new]
    if q == p:
        return _blossom(knots, p, P, spans, np.ascontiguousarray(args))
    acc = np.zeros((n_new, P.shape[1]))
    for s in range(q):
        sub = np.delete(args, s, axis=1)
        acc += _blossom(knots, p, P, spans, np.ascontiguousarray(sub))
    return acc / q


def _insert_one(knots: np.ndarray, p: int, P: np.ndarray, u: float):
    """Single knot insertion (Boehm); returns the new knot vector and control points."""
    k = int(find_spans(knots, p, np.array([u]))[0])
    s = int(np.count_nonzero(knots == u))
    Q = np.empty((P.shape[0] + 1, P.shape[1]))
    Q[: k - p + 1] = P[: k - p + 1]
    Q[k - s + 1 :] = P[k - s :]
    i = np.arange(k - p + 1, k - s + 1)
    alpha = ((u - knots[i]) / (knots[i + p] - knots[i]))[:, None]
    Q[i] = alpha * P[i] + (1.0 - alpha) * P[i - 1]
    return np.insert(knots, k + 1, u), Q


def refine(spline: Spline, direction: int, new_knots) -> Spline:
    """Insert several knots at once (values merged into the existing vector)."""
    new_knots = np.atleast_1d(np.asarray(new_knots, dtype=float))
    if new_knots.size == 0:
        return spline
    knots = spline.knots[direction]
    p = spline.degrees[direction]
    lo, hi = knots[0], knots[-1]
    if np.any(new_knots <= lo) or np.any(new_knots >= hi):
        raise RefinementError("inserted knots must lie strictly inside the knot span")
    merged = np.sort(np.concatenate([knots, new_knots]))
    _, mults = distinct_knots(merged[p + 1 : -p - 1])
    if mults.size and mults.max() > p:
        raise RefinementError(f"knot multiplicity would exceed degree {p}")
    def insert_all(P):
        k = knots
        for u in np.sort(new_knots):
            k, P = _insert_one(k, p, P, u)
        return P

    Pw = _along(spline.homogeneous(), direction, insert_all)
    new_kv = list(spline.knots)
    new_kv[direction] = merged
    return _from_homogeneous(spline.degrees, tuple(new_kv), Pw, spline.is_rational)


def insert_knot(spline: Spline, direction: int, value: float, times: int = 1) -> Spline:
    """Insert ``value`` ``times`` times in one direction, leaving the geometry unchanged.

    Raises:
        RefinementError: If ``value`` is not strictly inside the domain or the
            resulting multiplicity would exceed the degree.
    """
    if times < 1:
        raise RefinementError("times must be at least 1")
    return refine(spline, direction, np.full(int(times), float(value)))


def elevate_degree(spline: Spline, direction: int, times: int = 1) -> Spline:
    """Raise the degree in one direction by ``times`` (geometry unchanged)."""
    out = spline
    for _ in range(int(times)):
        knots = out.knots[direction]
        p = out.degrees[direction]
        values, mults = distinct_knots(knots)
        new_knots = np.repeat(values, mults + 1)
        Pw = _along(out.homogeneous(), direction, lambda P: _respline(knots, p, P, new_knots, p + 1))
        degrees = list(out.degrees)
        degrees[direction] = p + 1
        kv = list(out.knots)
        kv[direction] = new_knots
        out = _from_homogeneous(tuple(degrees), tuple(kv), Pw, out.is_rational)
    return out


def extract(spline: Spline, direction: int, lo: float, hi: float) -> Spline:
    """Restrict the spline to ``[lo, hi]`` in one direction (clamped result)."""
    knots = spline.knots[direction]
    p = spline.degrees[direction]
    a, b = knots[0], knots[-1]
    if not (a <= lo < hi <= b):
        raise RefinementError(f"sub-interval [{lo}, {hi}] not inside [{a}, {b}]")
    if lo == a and hi == b:
        return spline
    inner = knots[(knots > lo) & (knots < hi)]
    new_knots = np.concatenate([np.full(p + 1, lo), inner, np.full(p + 1, hi)])
    Pw = _along(spline.homogeneous(), direction, lambda P: _respline(knots, p, P, new_knots, p))
    kv = list(spline.knots)
    kv[direction] = new_knots
    return _from_homogeneous(spline.degrees, tuple(kv), Pw, spline.is_rational)


def bezier_knots(knots: np.ndarray, degree: int) -> np.ndarray:
    """Knot vector of the same space in piecewise-Bezier form (interior multiplicity = degree)."""
    values = distinct_knots(knots)[0]
    p = degree
    interior = values[1:-1]
    return np.concatenate([np.full(p + 1, values[0]), np.repeat(interior, p), np.full(p + 1, values[-1])])


def bezier_segments(knots: np.ndarray, degree: int, P: np.ndarray) -> np.ndarray:
    """Bernstein coefficients of every polynomial piece, shape ``(n_spans, degree+1, K)``."""
    p = degree
    bk = bezier_knots(knots, p)
    Q = _respline(knots, p, P, bk, p)
    nsp = (Q.shape[0] - 1) // p if p > 0 else Q.shape[0]
    if p == 0:
        return Q[:, None, :]
    idx = np.arange(nsp)[:, None] * p + np.arange(p + 1)
    return Q[idx]


# ---------------------------------------------------------------------------
# Degree reduction
# ---------------------------------------------------------------------------


def _reduced_knots(knots: np.ndarray, p: int) -> np.ndarray:
    values, mults = distinct_knots(knots)
    inner = np.maximum(1, mults[1:-1] - 1)
    return np.concatenate(
        [np.full(p, values[0]), np.repeat(values[1:-1], inner), np.full(p, values[-1])]
    )


def _span_samples(values: np.ndarray, count: int, kind: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample abscissae per non-empty span: returns ``(u, weights, span_index)``."""
    if kind == "gauss":
        x, w = np.polynomial.legendre.leggauss(count)
    else:
        # Chebyshev-Lobatto points: reduction errors peak at span ends
        x = -np.cos(np.pi * np.arange(count) / (count - 1))
        w = np.full(count, 2.0 / count)
    a, b = values[:-1], values[1:]
    half = 0.5 * (b - a)
    u = (0.5 * (a + b))[:, None] + half[:, None] * x[None, :]
    wt = half[:, None] * w[None, :]
    span_idx = np.repeat(np.arange(a.size), count)
    return u.reshape(-1), wt.reshape(-1), span_idx


def _column_deviation(P_old, P_new, B_old, B_new, rational: bool, dim_phys: int) -> np.ndarray:
    """Per-sample maximum (over columns) Euclidean deviation between two column curves."""
    H_old = B_old @ P_old
    H_new = B_new @ P_new
    K = P_old.shape[1]
    nd = dim_phys + 1
    H_old = H_old.reshape(H_old.shape[0], K // nd, nd)
    H_new = H_new.reshape(H_new.shape[0], K // nd, nd)
    if rational:
        X_old = H_old[..., :-1] / H_old[..., -1:]
        X_new = H_new[..., :-1] / H_new[..., -1:]
    else:
        X_old, X_new = H_old[..., :-1], H_new[..., :-1]
    return np.linalg.norm(X_old - X_new, axis=-1).max(axis=1)


def reduce_degree_detailed(spline: Spline, direction: int, samples_per_span: int | None = None):
    """Degree reduction with per-span error bookkeeping.

    Returns:
        ``(reduced, error, span_errors, breakpoints)`` where ``span_errors[i]``
        is the maximum sampled deviation on ``[breakpoints[i], breakpoints[i+1]]``.
    """
    p = spline.degrees[direction]
    if p < 2:
        raise RefinementError("cannot reduce below degree 1")
    knots = spline.knots[direction]
    new_knots = _reduced_knots(knots, p)
    values = distinct_knots(knots)[0]
    # L2 projection onto the lower-degree space; Gauss nodes make it exact
    # whenever the input already lies in that space
    ug, wg, _ = _span_samples(values, p + 1, "gauss")
    B_old_g = collocation_matrix(knots, p, ug)
    B_new_g = collocation_matrix(new_knots, p - 1, ug)
    sw = np.sqrt(wg)[:, None]
    rational = spline.is_rational
    Pw_full = spline.homogeneous()

    def project(P):
        sol, *_ = np.linalg.lstsq(B_new_g * sw, (B_old_g @ P) * sw, rcond=None)
        return sol

    Pw_new = _along(Pw_full, direction, project)
    degrees = list(spline.degrees)
    degrees[direction] = p - 1
    kv = list(spline.knots)
    kv[direction] = new_knots
    reduced = _from_homogeneous(tuple(degrees), tuple(kv), Pw_new, rational)

    count = samples_per_span or max(2 * (p + 1), 10)
    us, _, span_idx = _span_samples(values, count, "uniform")
    B_old_s = collocation_matrix(knots, p, us)
    B_new_s = collocation_matrix(new_knots, p - 1, us)
    flat_old = np.moveaxis(Pw_full, direction, 0).reshape(Pw_full.shape[direction], -1)
    flat_new = np.moveaxis(reduced.homogeneous(), direction, 0).reshape(Pw_new.shape[direction], -1)
    dev = _column_deviation(flat_old, flat_new, B_old_s, B_new_s, rational, spline.dim_phys)
    span_err = np.zeros(values.size - 1)
    np.maximum.at(span_err, span_idx, dev)
    return reduced, float(span_err.max()), span_err, values


def reduce_degree(spline: Spline, direction: int) -> tuple[Spline, float]:
    """Lower the degree in one direction by one.

    The result is the least-squares (L2) best approximation in the space of
    degree ``p-1`` with every interior knot multiplicity lowered by one
    (but kept at least one).  Inputs that came from degree elevation are
    recovered exactly.

    Returns:
        ``(reduced, error)`` with ``error`` the maximum deviation measured on a
        dense per-span sample of every control-net column.

    Raises:
        RefinementError: For degree-1 input.
    """
    reduced, err, _, _ = reduce_degree_detailed(spline, direction)
    return reduced, err


def control_polygon_lengths(spline: Spline, direction: int) -> np.ndarray:
    """Length of the control polygon along ``direction`` attributed to each non-empty span.

    Span ``J`` owns the polygon legs between control points ``J-p .. J``;
    lengths are summed over all columns of the net.
    """
    P = np.moveaxis(spline.control_points, direction, 0)
    legs = np.linalg.norm(np.diff(P, axis=0), axis=-1)
    legs = legs.reshape(legs.shape[0], -1).sum(axis=1)
    knots = spline.knots[direction]
    p = spline.degrees[direction]
    values = distinct_knots(knots)[0]
    spans = find_spans(knots, p, 0.5 * (values[:-1] + values[1:]))
    csum = np.concatenate([[0.0], np.cumsum(legs)])
    return csum[spans] - csum[spans - p]


def control_polygon_length(spline: Spline, direction: int | None = None) -> float:
    """Total control-polygon length (all directions when ``direction`` is None)."""
    dirs = range(spline.dim_param) if direction is None else [direction]
    total = 0.0
    for d in dirs:
        P = np.moveaxis(spline.control_points, d, 0)
        total += float(np.linalg.norm(np.diff(P, axis=0), axis=-1).sum())
    return total


def bounding_box(spline: Spline) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned box of the control net (contains the geometry)."""
    P = spline.control_points.reshape(-1, spline.dim_phys)
    return P.min(axis=0), P.max(axis=0)


def same_geometry(a: Spline, b: Spline, samples: int = 11) -> float:
    """Maximum deviation between two splines on a uniform grid of their common domain."""
    grid = parameter_grid(a, samples)
    return float(np.abs(evaluate(a, grid) - evaluate(b, grid)).max())
