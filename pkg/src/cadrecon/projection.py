"""Foot-point (closest-point) projection of physical points onto splines.

Seeds come from a uniform tessellation of the spline searched with a k-d
tree; each seed is then refined by damped Gauss-Newton on the squared
distance, using first derivatives only.  Parameters are kept inside the
domain by clamping, with the clamped directions frozen for the step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ProjectionError
from .spline import Spline, distinct_knots, evaluate, jacobian

MAX_ITERATIONS = 50
PARAM_STEP_TOL = 1e-12
DISTANCE_STEP_TOL = 1e-14
ORTHOGONALITY_TOL = 1e-8


@dataclass(frozen=True)
class ProjectionResult:
    parametric: np.ndarray
    distance: float
    iterations: int
    converged: bool = True


def tessellation(spline: Spline, per_span: int | None = None) -> np.ndarray:
    """Parameter grid with ``max(degree+1, 8)`` samples per knot span and direction."""
    axes = []
    for k, p in zip(spline.knots, spline.degrees):
        count = per_span or max(p + 1, 8)
        values = distinct_knots(k)[0]
        pieces = [np.linspace(a, b, count, endpoint=False) for a, b in zip(values[:-1], values[1:])]
        axes.append(np.concatenate(pieces + [values[-1:]]))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.reshape(-1) for g in mesh], axis=-1)


def seed_parameters(spline: Spline, queries: np.ndarray) -> np.ndarray:
    """Nearest tessellation sample for every query point."""
    grid = tessellation(spline)
    tree = cKDTree(evaluate(spline, grid))
    _, idx = tree.query(queries)
    return grid[idx]


def _solve_steps(J: np.ndarray, r: np.ndarray, free: np.ndarray) -> np.ndarray:
    """Gauss-Newton steps ``argmin |J s - r|`` restricted to free directions."""
    Jf = J * free[:, None, :]
    JtJ = np.einsum("mki,mkj->mij", Jf, Jf)
    Jtr = np.einsum("mki,mk->mi", Jf, r)
    dim = J.shape[-1]
    # frozen directions get an identity row so the system stays regular
    eye = np.eye(dim)[None] * (~free)[:, :, None]
    scale = np.maximum(np.einsum("mii->m", JtJ), 1e-300)[:, None, None]
    A = JtJ + eye * scale + np.eye(dim)[None] * scale * 1e-14
    return np.linalg.solve(A, Jtr[..., None])[..., 0] * free


def _orthogonal(J, r, u, lo, hi) -> np.ndarray:
    g = np.einsum("mki,mk->mi", J, r)
    norms = np.linalg.norm(J, axis=1) * np.linalg.norm(r, axis=1)[:, None]
    cos = np.abs(g) / np.maximum(norms, 1e-300)
    blocked = ((u <= lo) & (g < 0)) | ((u >= hi) & (g > 0))
    return np.all((cos < ORTHOGONALITY_TOL) | blocked, axis=1) | (np.linalg.norm(r, axis=1) == 0)


def project_array(
    spline: Spline,
    queries,
    seeds=None,
    max_iterations: int = MAX_ITERATIONS,
):
    """Vectorised projection.

    Returns:
        ``(params, distances, iterations, converged)`` arrays.
    """
    Q = np.asarray(queries, dtype=float).reshape(-1, spline.dim_phys)
    m, dim = Q.shape[0], spline.dim_param
    if m == 0:
        return np.zeros((0, dim)), np.zeros(0), np.zeros(0, int), np.zeros(0, bool)
    u = seed_parameters(spline, Q) if seeds is None else np.array(seeds, dtype=float).reshape(m, dim)
    lo = np.array([a for a, _ in spline.domain])
    hi = np.array([b for _, b in spline.domain])
    u = np.clip(u, lo, hi)
    S, J = jacobian(spline, u)
    r = Q - S
    dist = np.linalg.norm(r, axis=1)
    lam = np.ones(m)
    iters = np.zeros(m, dtype=int)
    done = dist == 0.0
    width = hi - lo
    for _ in range(max_iterations):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        iters[act] += 1
        ua, Ja, ra = u[act], J[act], r[act]
        grad = np.einsum("mki,mk->mi", Ja, ra)  # descent direction of |r|^2 / 2
        at_lo = (ua <= lo) & (grad < 0)
        at_hi = (ua >= hi) & (grad > 0)
        free = ~(at_lo | at_hi)
        step = _solve_steps(Ja, ra, free)
        trial = np.clip(ua + lam[act, None] * step, lo, hi)
        S_t, J_t = jacobian(spline, trial)
        r_t = Q[act] - S_t
        d_t = np.linalg.norm(r_t, axis=1)
        moved = np.abs(trial - ua).max(axis=1) / np.max(width)
        better = d_t <= dist[act]
        acc = act[better]
        delta_d = dist[acc] - d_t[better]
        u[acc], S[acc], J[acc], r[acc], dist[acc] = trial[better], S_t[better], J_t[better], r_t[better], d_t[better]
        lam[acc] = np.minimum(1.0, 1.25 * lam[acc])
        # a stalled distance only counts once the residual is orthogonal to the free tangents
        ortho = _orthogonal(J[acc], r[acc], u[acc], lo, hi)
        conv = (moved[better] < PARAM_STEP_TOL) | ((delta_d < DISTANCE_STEP_TOL * np.maximum(1.0, dist[acc])) & ortho)
        done[acc[conv]] = True
        rej = act[~better]
        lam[rej] *= 0.5
        # an ever-shrinking step means no descent is available: stationary
        done[rej[lam[rej] < 1e-14]] = True
        done[rej[moved[~better] < PARAM_STEP_TOL]] = True
    return u, dist, iters, done


def project_point(spline: Spline, query, seed=None, max_iterations: int = MAX_ITERATIONS) -> ProjectionResult:
    """Closest point on ``spline`` to ``query`` (local optimum from the tessellation seed).

    Raises:
        ProjectionError: When the iteration cap is hit; ``error.best`` holds
            the best iterate.
    """
    seeds = None if seed is None else np.atleast_1d(np.asarray(seed, dtype=float))[None]
    u, d, it, ok = project_array(spline, np.asarray(query, dtype=float)[None], seeds, max_iterations)
    res = ProjectionResult(u[0], float(d[0]), int(it[0]), bool(ok[0]))
    if not res.converged:
        raise ProjectionError(f"projection did not converge in {max_iterations} iterations", best=res)
    return res


def project_points(spline: Spline, queries, seeds=None, max_iterations: int = MAX_ITERATIONS) -> list[ProjectionResult]:
    """Batch projection; failures are flagged per point instead of raising.

    Args:
        spline: Target spline.
        queries: ``(m, dim_phys)`` points.
        seeds: Optional initial parametric coordinates (e.g. coordinates
            already known from the mesh the points came from).  Without them
            seeds come from the tessellation nearest-neighbour search.
    """
    u, d, it, ok = project_array(spline, queries, seeds, max_iterations)
    return [ProjectionResult(u[i], float(d[i]), int(it[i]), bool(ok[i])) for i in range(d.size)]
