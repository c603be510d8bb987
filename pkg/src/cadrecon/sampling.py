"""Well-posedness checks and additional correspondence points for thin entities.

A spline fit is only determined when every knot span sees enough data and
every direction has at least as many distinct parametric coordinates as
control points.  Curves along sharp edges routinely fail this, so extra
points are added at the curve's Greville abscissae, with targets taken either
from the already reconstructed owning surface or from a local frame spanned
by nearby mesh points (ghost points).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.spatial import cKDTree

from .errors import SamplingError
from .projection import project_array
from .spline import Spline, distinct_knots, evaluate, greville_abscissae

COLLINEAR_TOL = 1e-12
NEIGHBOURS = 8


def required_points(m1: int, m2: int, degree: int) -> int:
    """Points needed in a span bounded by knots of multiplicity ``m1`` and ``m2``."""
    return 1 + max(0, m1 - degree, m2 - degree)


def direction_conditions(knots, degree: int, coords) -> tuple[bool, bool, list[str]]:
    """Evaluate the two counting conditions along one parametric direction.

    Points are counted by distinct coordinate value, and a point on a
    breakpoint counts for both adjacent spans (closed intervals).

    Returns:
        ``(span_condition_ok, count_condition_ok, messages)``.
    """
    knots = np.asarray(knots, dtype=float)
    values, mult = distinct_knots(knots)
    u = np.unique(np.asarray(coords, dtype=float))
    messages = []
    ok_a = True
    for j in range(values.size - 1):
        lo, hi = values[j], values[j + 1]
        need = required_points(int(mult[j]), int(mult[j + 1]), degree)
        have = int(np.count_nonzero((u >= lo) & (u <= hi)))
        if have < need:
            ok_a = False
            messages.append(f"span [{lo:.6g}, {hi:.6g}] holds {have} point(s), needs {need}")
    n = knots.size - degree - 1
    ok_b = u.size >= n
    if not ok_b:
        messages.append(f"{u.size} distinct coordinate(s) for {n} control points")
    return ok_a, ok_b, messages


@dataclass
class Diagnosis:
    """Result of :func:`needs_augmentation`; truthy when points must be added."""

    needed: bool
    messages: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.needed


def needs_augmentation(spline: Spline, param_coords) -> Diagnosis:
    """Check whether fitting ``spline`` to data at ``param_coords`` is under-determined."""
    params = np.asarray(param_coords, dtype=float).reshape(-1, spline.dim_param)
    messages = []
    for d in range(spline.dim_param):
        ok_a, ok_b, msgs = direction_conditions(spline.knots[d], spline.degrees[d], params[:, d])
        messages += [f"direction {d}: {m}" for m in msgs]
    return Diagnosis(bool(messages), messages)


@dataclass
class SamplingAugmentation:
    added_param_coords: np.ndarray
    added_initial_points: np.ndarray
    added_target_points: np.ndarray
    strategy: str

    def __len__(self) -> int:
        return int(self.added_param_coords.shape[0])


def sample_sites(curve: Spline) -> np.ndarray:
    """Greville abscissae of a curve as an ``(n, 1)`` array."""
    return greville_abscissae(curve.knot_vector(0))[:, None]


def augment_from_surface(curve: Spline, owner_initial: Spline, owner_deformed: Spline, epsilon: float | None = None):
    """Targets for the curve's Greville points read off the reconstructed owning surface.

    The Greville points of the curve are projected onto the owner in its
    initial state; the deformed owner is evaluated at the resulting surface
    coordinates, so the added targets lie exactly on the deformed surface.

    Raises:
        SamplingError: If some curve point is farther than ``epsilon`` from
            the initial owner.
    """
    sites = sample_sites(curve)
    pts = evaluate(curve, sites)
    if epsilon is None:
        epsilon = 1e-6 * max(1.0, float(np.linalg.norm(np.ptp(pts, axis=0))))
    eta, dist, _, _ = project_array(owner_initial, pts)
    if np.any(dist > epsilon):
        worst = float(dist.max())
        raise SamplingError(f"curve is {worst:.3e} away from its owner surface (tolerance {epsilon:.3e})")
    targets = evaluate(owner_deformed, eta)
    return SamplingAugmentation(sites, pts, targets, "surface")


def _frame(P: np.ndarray) -> np.ndarray:
    d1 = P[1] - P[0]
    d2 = P[2] - P[0]
    return np.column_stack([d1, d2, np.cross(d1, d2)])


def _collinear(P: np.ndarray) -> bool:
    """True when every point lies on one line (or coincides)."""
    d = P - P[0]
    far = np.argmax(np.linalg.norm(d, axis=1))
    ref = d[far]
    scale = np.linalg.norm(ref)
    if scale == 0:
        return True
    cross = np.linalg.norm(np.cross(d, ref), axis=1)
    return bool(np.all(cross < COLLINEAR_TOL * scale * np.maximum(np.linalg.norm(d, axis=1), 1e-300)))


def _pick_triple(P: np.ndarray, order: np.ndarray):
    """First non-collinear triple among the ordered neighbours."""
    for i, j, k in combinations(range(order.size), 3):
        tri = order[[i, j, k]]
        d1 = P[tri[1]] - P[tri[0]]
        d2 = P[tri[2]] - P[tri[0]]
        scale = np.linalg.norm(d1) * np.linalg.norm(d2)
        if scale > 0 and np.linalg.norm(np.cross(d1, d2)) >= COLLINEAR_TOL * scale:
            return tri
    return None


def ghost_points(queries, initial, deformed, candidates=None) -> np.ndarray:
    """Map points through the local frames of their nearest mesh points.

    For each query ``x`` the three nearest (non-collinear) mesh points give
    ``A = [d1 d2 d1 x d2]`` with offsets from the nearest point ``x1``;
    ``b = A^-1 (x - x1)`` and the ghost target is ``x1' + A' b``.

    Raises:
        SamplingError: If no non-collinear triple exists among the candidates.
    """
    X = np.asarray(initial, dtype=float)
    Xd = np.asarray(deformed, dtype=float)
    idx = np.arange(X.shape[0]) if candidates is None else np.asarray(candidates, dtype=int)
    if idx.size < 3:
        raise SamplingError("fewer than 3 mesh points available for ghost points")
    Q = np.asarray(queries, dtype=float).reshape(-1, 3)
    tree = cKDTree(X[idx])
    k = min(NEIGHBOURS, idx.size)
    _, near = tree.query(Q, k=k)
    near = np.atleast_2d(near)
    out = np.empty_like(Q)
    for q in range(Q.shape[0]):
        order = idx[near[q]]
        tri = _pick_triple(X, order)
        if tri is None:
            # widen the search to every candidate
            _, full = tree.query(Q[q], k=min(idx.size, 4 * NEIGHBOURS))
            tri = _pick_triple(X, idx[np.atleast_1d(full)])
        if tri is None:
            raise SamplingError("all candidate mesh points are collinear")
        b = np.linalg.solve(_frame(X[tri]), Q[q] - X[tri[0]])
        out[q] = Xd[tri[0]] + _frame(Xd[tri]) @ b
    return out


def augment_from_mesh(curve: Spline, mesh_pair, mask=None) -> SamplingAugmentation:
    """Ghost-point targets for the curve's Greville points.

    Args:
        curve: Curve entity in its initial state.
        mesh_pair: Object with ``initial`` and ``deformed`` arrays.
        mask: Indices of mesh points associated with the curve.  If they
            are too few or all collinear (a straight edge), the whole mesh is
            searched instead.
    """
    sites = sample_sites(curve)
    pts = evaluate(curve, sites)
    X = np.asarray(mesh_pair.initial, dtype=float)
    cand = None
    if mask is not None and len(mask) >= 3 and not _collinear(X[np.asarray(mask, dtype=int)]):
        cand = np.asarray(mask, dtype=int)
    targets = ghost_points(pts, X, mesh_pair.deformed, cand)
    return SamplingAugmentation(sites, pts, targets, "mesh")
