"""Control-point fitting with a fixed parameterisation, and the adaptive fit loop.

The objective that measures reconstruction quality is the sum of pointwise
distances ``sum_i |S(xi_i) - x'_i|``.  Both solvers minimise the smooth sum
of squared distances instead: :func:`fit_lsq` through an SVD pseudo-inverse,
:func:`fit_opt` with L-BFGS started from the current control points.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import cKDTree

from .errors import FitError
from .sampling import direction_conditions
from .settings import get_settings
from .spline import (
    Spline,
    basis_functions,
    distinct_knots,
    elevate_degree,
    evaluate,
    insert_knot,
)

log = logging.getLogger(__name__)

RANK_RCOND = 1e-10


@dataclass
class FitProblem:
    """Control-point placement problem for one spline.

    Attributes:
        spline: Initial spline; its knots, degrees and weights stay fixed.
        param_coords: ``(m, dim_param)`` parametric coordinates of the data.
        targets: ``(m, dim_phys)`` points to approximate.
        fixed_boundary: Keep the outermost control points where they are.
    """

    spline: Spline
    param_coords: np.ndarray
    targets: np.ndarray
    fixed_boundary: bool = False

    def __post_init__(self):
        dim = self.spline.dim_param
        self.param_coords = np.asarray(self.param_coords, dtype=float).reshape(-1, dim)
        self.targets = np.asarray(self.targets, dtype=float).reshape(-1, self.spline.dim_phys)
        if self.param_coords.shape[0] != self.targets.shape[0]:
            raise FitError("param_coords and targets differ in length")
        for d, (lo, hi) in enumerate(self.spline.domain):
            col = self.param_coords[:, d]
            if col.size and (col.min() < lo or col.max() > hi):
                raise FitError(f"parametric coordinates leave the domain in direction {d}")

    def with_spline(self, spline: Spline) -> "FitProblem":
        return FitProblem(spline, self.param_coords, self.targets, self.fixed_boundary)


@dataclass
class FitReport:
    """Outcome of a fit.

    ``residual_history`` holds the summed pointwise distance after every
    solve (the first entry is the starting value); ``squared_history`` holds
    the least-squares objective the solvers actually minimise.
    """

    residual_history: list[float] = field(default_factory=list)
    squared_history: list[float] = field(default_factory=list)
    final_max_error: float = 0.0
    final_mean_error: float = 0.0
    refinement_log: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    iterations: int = 0
    converged: bool = True
    n_points: int = 0
    entity_id: object = None
    mesh_max_error: float | None = None
    mesh_mean_error: float | None = None
    failed: bool = False

    def record(self, spline: Spline, params: np.ndarray, targets: np.ndarray) -> np.ndarray:
        err = pointwise_errors(spline, params, targets)
        self.residual_history.append(float(err.sum()))
        self.squared_history.append(float(np.dot(err, err)))
        self.final_max_error = float(err.max()) if err.size else 0.0
        self.final_mean_error = float(err.mean()) if err.size else 0.0
        self.n_points = int(err.size)
        return err

    def to_dict(self) -> dict:
        return {
            "entity_id": self.entity_id,
            "n_points": self.n_points,
            "residual_history": self.residual_history,
            "squared_history": self.squared_history,
            "final_max_error": self.final_max_error,
            "final_mean_error": self.final_mean_error,
            "refinement_log": self.refinement_log,
            "warnings": self.warnings,
            "iterations": self.iterations,
            "converged": self.converged,
            "mesh_max_error": self.mesh_max_error,
            "mesh_mean_error": self.mesh_mean_error,
            "failed": self.failed,
        }


# ---------------------------------------------------------------------------
# Residual, basis matrix, gradient
# ---------------------------------------------------------------------------


def basis_matrix(spline: Spline, params) -> np.ndarray:
    """Dense matrix of (rational) basis values, rows = points, columns = flattened net."""
    params = np.asarray(params, dtype=float).reshape(-1, spline.dim_param)
    m = params.shape[0]
    rows = None
    for d, (k, p) in enumerate(zip(spline.knots, spline.degrees)):
        spans, N = basis_functions(k, p, params[:, d])
        B = np.zeros((m, k.size - p - 1))
        np.put_along_axis(B, spans[:, None] - p + np.arange(p + 1), N, axis=1)
        rows = B if rows is None else np.einsum("mi,mj->mij", rows, B).reshape(m, -1)
    if spline.is_rational:
        w = spline.weights.reshape(-1)
        rows = rows * w
        rows /= rows.sum(axis=1, keepdims=True)
    return rows


def pointwise_errors(spline: Spline, param_coords, targets) -> np.ndarray:
    params = np.asarray(param_coords, dtype=float).reshape(-1, spline.dim_param)
    if params.shape[0] == 0:
        return np.zeros(0)
    return np.linalg.norm(evaluate(spline, params) - np.asarray(targets, dtype=float), axis=1)


def residual(spline: Spline, param_coords, targets) -> float:
    """Sum of Euclidean distances ``sum_i |S(xi_i) - x'_i|``."""
    return float(pointwise_errors(spline, param_coords, targets).sum())


def residual_gradient(spline: Spline, param_coords, targets) -> np.ndarray:
    """Gradient of :func:`residual` with respect to every control-point coordinate.

    Each term contributes ``R_k(xi_i) * (S(xi_i) - x'_i) / |S(xi_i) - x'_i|``.
    Terms with zero distance are non-differentiable and contribute nothing.
    """
    params = np.asarray(param_coords, dtype=float).reshape(-1, spline.dim_param)
    R = basis_matrix(spline, params)
    diff = R @ spline.control_points.reshape(-1, spline.dim_phys) - np.asarray(targets, dtype=float)
    norm = np.linalg.norm(diff, axis=1, keepdims=True)
    unit = np.divide(diff, norm, out=np.zeros_like(diff), where=norm > 0)
    return (R.T @ unit).reshape(spline.control_points.shape)


def _free_mask(spline: Spline, fixed_boundary: bool) -> np.ndarray:
    free = np.ones(spline.shape, dtype=bool)
    if fixed_boundary:
        for d in range(spline.dim_param):
            idx = [slice(None)] * spline.dim_param
            idx[d] = 0
            free[tuple(idx)] = False
            idx[d] = -1
            free[tuple(idx)] = False
    return free.reshape(-1)


def _unconstrained(V: np.ndarray, rank: int, free_idx: np.ndarray, shape) -> list[tuple]:
    null = V[rank:]
    weight = np.linalg.norm(null, axis=0)
    hits = free_idx[weight > 1e-8]
    return [tuple(int(i) for i in np.unravel_index(h, shape)) for h in hits]


def _solve_displacement(R: np.ndarray, rhs: np.ndarray, strict: bool, free_idx, shape):
    """Minimum-norm displacement ``argmin |R dD - rhs|`` via SVD."""
    if R.shape[1] == 0:
        return np.zeros((0, rhs.shape[1]))
    U, s, Vt = np.linalg.svd(R, full_matrices=False)
    tol = RANK_RCOND * (s[0] if s.size else 0.0)
    rank = int(np.count_nonzero(s > tol))
    if rank < R.shape[1] and strict:
        V_full = np.linalg.svd(R, full_matrices=True)[2] if R.shape[0] < R.shape[1] else Vt
        raise FitError(
            f"rank-deficient system: rank {rank} for {R.shape[1]} free control points",
            _unconstrained(V_full, rank, free_idx, shape),
        )
    inv = np.where(s > tol, 1.0 / np.where(s > tol, s, 1.0), 0.0)
    return Vt.T @ (inv[:, None] * (U.T @ rhs))


def _check_counts(problem: FitProblem) -> None:
    sp = problem.spline
    for d in range(sp.dim_param):
        distinct = np.unique(problem.param_coords[:, d]).size
        if distinct < sp.shape[d]:
            raise FitError(
                f"direction {d}: {distinct} distinct parametric coordinates for {sp.shape[d]} control points"
            )


def _lsq_step(problem: FitProblem, strict: bool) -> Spline:
    sp = problem.spline
    R = basis_matrix(sp, problem.param_coords)
    D0 = sp.control_points.reshape(-1, sp.dim_phys)
    free = _free_mask(sp, problem.fixed_boundary)
    free_idx = np.flatnonzero(free)
    rhs = problem.targets - R @ D0
    delta = _solve_displacement(R[:, free], rhs, strict, free_idx, sp.shape)
    D = D0.copy()
    D[free] += delta
    return sp.with_control_points(D.reshape(sp.control_points.shape))


def fit_lsq(problem: FitProblem) -> tuple[Spline, FitReport]:
    """Least-squares control points through the SVD pseudo-inverse of the basis matrix.

    Raises:
        FitError: If some direction has fewer distinct parametric coordinates
            than control points, or the basis matrix is rank deficient
            (``error.unconstrained`` lists the affected control-point indices).
    """
    _check_counts(problem)
    report = FitReport()
    report.record(problem.spline, problem.param_coords, problem.targets)
    fitted = _lsq_step(problem, strict=True)
    report.record(fitted, problem.param_coords, problem.targets)
    report.iterations = 1
    return fitted, report


def fit_opt(
    problem: FitProblem,
    max_iterations: int = 10000,
    gtol: float = 1e-10,
    rtol: float = 1e-12,
) -> tuple[Spline, FitReport]:
    """Quasi-Newton (L-BFGS) minimisation of the squared pointwise distances.

    Starts from the current control points, so directions the data does not
    constrain keep their initial position.  Stops when the gradient norm
    drops below ``gtol`` (scaled by the target magnitude) or the objective
    changes by less than ``rtol`` relative between iterations.
    """
    sp = problem.spline
    report = FitReport()
    report.record(sp, problem.param_coords, problem.targets)
    R = basis_matrix(sp, problem.param_coords)
    D0 = sp.control_points.reshape(-1, sp.dim_phys)
    free = _free_mask(sp, problem.fixed_boundary)
    Rf = R[:, free]
    base = problem.targets - R[:, ~free] @ D0[~free]
    scale = max(1.0, float(np.abs(problem.targets).max(initial=0.0)))
    dim = sp.dim_phys

    def fun(x):
        diff = Rf @ x.reshape(-1, dim) - base
        return 0.5 * float(np.sum(diff * diff)) / scale**2, (Rf.T @ diff).reshape(-1) / scale**2

    state = {"prev": None}

    def callback(intermediate_result):
        f = intermediate_result.fun
        prev = state["prev"]
        state["prev"] = f
        if prev is not None and abs(prev - f) <= rtol * max(abs(prev), 1e-300):
            raise StopIteration

    res = minimize(
        fun,
        D0[free].reshape(-1),
        jac=True,
        method="L-BFGS-B",
        callback=callback,
        options={"maxiter": max_iterations, "maxfun": 4 * max_iterations, "gtol": gtol, "ftol": 0.0, "maxcor": 20},
    )
    D = D0.copy()
    D[free] = res.x.reshape(-1, dim)
    fitted = sp.with_control_points(D.reshape(sp.control_points.shape))
    report.record(fitted, problem.param_coords, problem.targets)
    report.iterations = int(res.nit)
    if res.nit >= max_iterations:
        report.converged = False
        report.warnings.append(f"iteration cap {max_iterations} reached; best iterate returned")
    return fitted, report


# ---------------------------------------------------------------------------
# Knot placement
# ---------------------------------------------------------------------------


def weiss_candidates(spline: Spline, param_coords, pointwise, directions=None) -> list[tuple[float, int, int, float]]:
    """All knot-insertion candidates, best first: ``(error_mass, direction, span, value)``.

    The error mass of a span is the summed pointwise error of the points
    whose coordinate falls in it.  The knot value is the error-weighted mean
    coordinate of those points, clamped to the central 80 % of the span.
    Ties resolve to the lower direction, then the lower span index.
    """
    params = np.asarray(param_coords, dtype=float).reshape(-1, spline.dim_param)
    e = np.asarray(pointwise, dtype=float)
    dirs = range(spline.dim_param) if directions is None else directions
    out = []
    for d in dirs:
        values = distinct_knots(spline.knots[d])[0]
        nsp = values.size - 1
        idx = np.clip(np.searchsorted(values, params[:, d], side="right") - 1, 0, nsp - 1)
        mass = np.bincount(idx, weights=e, minlength=nsp)
        moment = np.bincount(idx, weights=e * params[:, d], minlength=nsp)
        for j in range(nsp):
            if mass[j] <= 0:
                continue
            lo, hi = values[j], values[j + 1]
            w = hi - lo
            value = float(np.clip(moment[j] / mass[j], lo + 0.1 * w, hi - 0.1 * w))
            out.append((float(mass[j]), d, j, value))
    order = sorted(range(len(out)), key=lambda i: (-out[i][0], out[i][1], out[i][2]))
    return [out[i] for i in order]


def weiss_select_knot(spline: Spline, param_coords, pointwise_errors, direction_policy=None) -> tuple[int, float]:
    """Direction and value of the next knot: the span carrying the largest error.

    Args:
        direction_policy: ``None`` to search every direction, or a direction
            index to restrict the search.

    Raises:
        FitError: If every pointwise error is zero.
    """
    if not np.any(np.asarray(pointwise_errors) > 0):
        raise FitError("all pointwise errors are zero; no knot insertion needed")
    dirs = None if direction_policy is None else [int(direction_policy)]
    cands = weiss_candidates(spline, param_coords, pointwise_errors, dirs)
    _, d, _, value = cands[0]
    return d, value


# ---------------------------------------------------------------------------
# Adaptive fit loop
# ---------------------------------------------------------------------------


def merge_duplicates(param_coords, targets, tol: float | None = None):
    """Drop points whose target lies within ``tol`` of an earlier one."""
    tol = get_settings().merge_tol if tol is None else tol
    X = np.asarray(targets, dtype=float)
    keep = np.ones(X.shape[0], dtype=bool)
    if X.shape[0] > 1:
        for i, j in sorted(cKDTree(X).query_pairs(tol)):
            if keep[i] and keep[j]:
                keep[j] = False
    return np.asarray(param_coords)[keep], X[keep], keep


def default_epsilon(targets) -> float:
    X = np.asarray(targets, dtype=float)
    if X.size == 0:
        return 1e-12
    diag = float(np.linalg.norm(X.max(axis=0) - X.min(axis=0)))
    return 1e-4 * diag if diag > 0 else 1e-12


def _supported(spline: Spline, params: np.ndarray, direction: int) -> bool:
    ok_a, ok_b, _ = direction_conditions(spline.knots[direction], spline.degrees[direction], params[:, direction])
    return ok_a and ok_b


def spline_fit(
    problem: FitProblem,
    max_degree: int = 4,
    epsilon: float | None = None,
    budget: int = 50,
    solver: str = "lsq",
) -> tuple[Spline, FitReport]:
    """Adaptive refit: optimise control points, refine, repeat.

    After each solve the maximum pointwise error is compared with
    ``epsilon``.  While it is too large the spline is refined: first by
    degree elevation (every direction below ``max_degree`` whose data still
    determines the enlarged net), then by inserting the knot chosen by
    :func:`weiss_candidates`.  Each refinement preserves the geometry, so the
    next solve is warm-started.

    Returns:
        The fitted spline and a report whose ``refinement_log`` lists every
        action in order.  Exhausting ``budget`` or running out of admissible
        refinements is reported as a warning, not raised.
    """
    params, targets, _ = merge_duplicates(problem.param_coords, problem.targets)
    problem = FitProblem(problem.spline, params, targets, problem.fixed_boundary)
    eps = default_epsilon(targets) if epsilon is None else float(epsilon)
    report = FitReport()
    err = report.record(problem.spline, params, targets)
    if err.size == 0:
        report.warnings.append("no data points; spline left unchanged")
        return problem.spline, report
    if err.max() < eps:
        return problem.spline, report

    def solve(sp: Spline) -> Spline:
        sub = problem.with_spline(sp)
        if solver == "opt":
            out, rep = fit_opt(sub)
            report.iterations += rep.iterations
            return out
        report.iterations += 1
        return _lsq_step(sub, strict=False)

    current = problem.spline
    actions = 0
    while True:
        current = solve(current)
        err = report.record(current, params, targets)
        if err.max() < eps:
            break
        if actions >= budget:
            report.converged = False
            report.warnings.append(f"refinement budget of {budget} actions exhausted")
            break
        refined = False
        for d in range(current.dim_param):
            if current.degrees[d] >= max_degree:
                continue
            cand = elevate_degree(current, d)
            if _supported(cand, params, d):
                current = cand
                actions += 1
                refined = True
                report.refinement_log.append({"action": "elevate", "direction": d, "degree": cand.degrees[d]})
        if not refined:
            for _, d, _, value in weiss_candidates(current, params, err):
                if current.knot_vector(d).multiplicity(value) >= current.degrees[d]:
                    continue
                cand = insert_knot(current, d, value)
                if _supported(cand, params, d):
                    current = cand
                    actions += 1
                    refined = True
                    report.refinement_log.append({"action": "insert", "direction": d, "value": value})
                    break
        if not refined:
            report.converged = False
            report.warnings.append("no admissible refinement left; data cannot support a finer spline")
            break
    return current, report
