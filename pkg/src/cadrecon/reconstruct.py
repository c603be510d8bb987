"""End-to-end reconstruction pipelines.

* :func:`reconstruct_by_fitting` refits every entity against the deformed
  positions of the mesh points lying on it (surfaces first, so curves can be
  augmented from their reconstructed owners).
* :func:`reconstruct_by_composition` fits one trivariate Bezier map to the
  whole mesh and composes every entity into it.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .composition import compose, identity_trivariate
from .errors import CadReconError, CompositionError, FitError, ProjectionError, SamplingError
from .fitting import FitProblem, FitReport, _lsq_step, fit_opt, pointwise_errors, spline_fit
from .lowdegree import low_order_approximation
from .model import GeometryModel, MeshPair, PointAssignment
from .projection import project_array
from .sampling import augment_from_mesh, augment_from_surface, needs_augmentation
from .spline import Spline, jacobian

log = logging.getLogger(__name__)

BOX_MARGIN = 1e-6
DEFAULT_MASK_TOL = 1e-6


def _map(fn, items, jobs: int):
    if jobs and jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def default_mask_tolerance(mesh_pair: MeshPair) -> float:
    return DEFAULT_MASK_TOL * max(mesh_pair.diagonal(), 1.0)


# ---------------------------------------------------------------------------
# Point assignment
# ---------------------------------------------------------------------------


def assign_entity(spline: Spline, points: np.ndarray, epsilon: float, entity_id=None) -> PointAssignment:
    lo = spline.control_points.reshape(-1, 3).min(axis=0) - epsilon
    hi = spline.control_points.reshape(-1, 3).max(axis=0) + epsilon
    cand = np.flatnonzero(np.all((points >= lo) & (points <= hi), axis=1))
    u, dist, _, _ = project_array(spline, points[cand])
    keep = dist <= epsilon
    return PointAssignment(entity_id, cand[keep], u[keep], dist[keep])


def assign_points(model: GeometryModel, mesh_pair: MeshPair, epsilon: float | None = None, jobs: int = 1):
    """Mesh points within ``epsilon`` of each entity, with their foot-point parameters.

    A point may belong to several entities (shared edges).  Entities with
    an empty mask and mesh points on no entity are logged.
    """
    eps = default_mask_tolerance(mesh_pair) if epsilon is None else float(epsilon)
    X = mesh_pair.initial
    out = _map(lambda e: assign_entity(e.spline, X, eps, e.id), list(model.entities), jobs)
    for a in out:
        if len(a) == 0:
            log.warning("entity %s: no mesh points within %.3e", a.entity_id, eps)
    covered = np.zeros(len(mesh_pair), dtype=bool)
    for a in out:
        covered[a.mask] = True
    if not covered.all():
        log.info("%d mesh points lie on no entity", int((~covered).sum()))
    return out


def model_errors(model: GeometryModel, assignments, mesh_pair: MeshPair) -> np.ndarray:
    """Pointwise errors ``|S'(xi) - x'|`` over every (entity, assigned point) pair."""
    errs = []
    for e, a in zip(model.entities, assignments):
        if len(a):
            errs.append(pointwise_errors(e.spline, a.param_coords, mesh_pair.deformed[a.mask]))
    return np.concatenate(errs) if errs else np.zeros(0)


def error_summary(errors: np.ndarray) -> dict:
    if errors.size == 0:
        return {"max": 0.0, "mean": 0.0, "count": 0}
    return {"max": float(errors.max()), "mean": float(errors.mean()), "count": int(errors.size)}


# ---------------------------------------------------------------------------
# Per-entity fitting
# ---------------------------------------------------------------------------


@dataclass
class FittingOptions:
    epsilon: float | None = None
    strategy: str = "surface"
    max_degree: int = 4
    mask_tolerance: float | None = None
    solver: str = "lsq"
    budget: int = 50
    fixed_boundary: bool = False
    jobs: int = 1


def _fit_entity(entity, assignment, mesh_pair, opts: FittingOptions, owners: dict):
    spline = entity.spline
    params = assignment.param_coords
    targets = mesh_pair.deformed[assignment.mask]
    report = FitReport(entity_id=entity.id)
    try:
        diag = needs_augmentation(spline, params)
        if diag:
            aug = None
            if entity.kind == "curve" and opts.strategy == "surface":
                owner = next((o for o in entity.owner_ids if o in owners), None)
                if owner is not None:
                    initial, deformed = owners[owner]
                    aug = augment_from_surface(spline, initial, deformed)
                else:
                    report.warnings.append("no reconstructed owner surface; using mesh ghost points")
            if aug is None and entity.kind == "curve":
                aug = augment_from_mesh(spline, mesh_pair, assignment.mask)
            if aug is None:
                report.warnings.append("under-determined: " + "; ".join(diag.messages))
            else:
                params = np.concatenate([params, aug.added_param_coords])
                targets = np.concatenate([targets, aug.added_target_points])
                report.warnings.append(f"added {len(aug)} {aug.strategy} sampling points")
        if params.shape[0] == 0:
            raise FitError("no data points for entity")
        problem = FitProblem(spline, params, targets, opts.fixed_boundary)
        fitted, fit_report = spline_fit(problem, opts.max_degree, opts.epsilon, opts.budget, opts.solver)
        fit_report.entity_id = entity.id
        fit_report.warnings = report.warnings + fit_report.warnings
        report = fit_report
    except (FitError, SamplingError, ProjectionError, CadReconError) as exc:
        report.failed = True
        report.converged = False
        report.warnings.append(f"fit failed: {exc}")
        log.warning("entity %s: %s", entity.id, exc)
        fitted = spline
    if len(assignment):
        err = pointwise_errors(fitted, assignment.param_coords, mesh_pair.deformed[assignment.mask])
        report.mesh_max_error = float(err.max())
        report.mesh_mean_error = float(err.mean())
    return fitted, report


def reconstruct_by_fitting(model: GeometryModel, mesh_pair: MeshPair, options: FittingOptions | None = None, assignments=None):
    """Refit every entity to the deformed mesh.

    Returns:
        ``(new_model, reports)`` with one :class:`FitReport` per entity in
        model order.  Failed entities keep their geometry and are flagged.
    """
    opts = options or FittingOptions()
    if opts.strategy not in ("surface", "mesh"):
        raise ValueError("strategy must be 'surface' or 'mesh'")
    if assignments is None:
        assignments = assign_points(model, mesh_pair, opts.mask_tolerance, opts.jobs)
    by_id = {a.entity_id: a for a in assignments}
    results: dict = {}
    owners: dict = {}
    for kind in ("surface", "curve"):
        ents = [e for e in model.entities if e.kind == kind]
        outs = _map(lambda e: _fit_entity(e, by_id[e.id], mesh_pair, opts, owners), ents, opts.jobs)
        for e, (fitted, rep) in zip(ents, outs):
            results[e.id] = (fitted, rep)
            if kind == "surface" and not rep.failed:
                owners[e.id] = (e.spline, fitted)
    new_model = model.with_splines({k: v[0] for k, v in results.items()})
    reports = [results[e.id][1] for e in model.entities]
    return new_model, reports


# ---------------------------------------------------------------------------
# Synthetic deformation
# ---------------------------------------------------------------------------


def prescribed_deformation(points, c: float = 0.15) -> np.ndarray:
    """Radial push away from the centroid, growing with squared distance.

    ``d_j = c * (r_j / max r) * (x_j - x_center)`` with ``r_j`` the squared
    distance of ``x_j`` to the centroid.
    """
    X = np.asarray(points, dtype=float).reshape(-1, 3)
    centre = X.mean(axis=0)
    rel = X - centre
    r = np.einsum("ij,ij->i", rel, rel)
    rmax = r.max() if r.size else 0.0
    if rmax == 0:
        return X.copy()
    return X + c * (r / rmax)[:, None] * rel


# ---------------------------------------------------------------------------
# Global composition
# ---------------------------------------------------------------------------


def deformation_box(mesh_pair: MeshPair, extra_box=None, margin: float = BOX_MARGIN):
    """Parameter box of the deformation map: mesh bounding box (optionally
    united with ``extra_box``) inflated by ``margin`` relative per axis."""
    lo, hi = mesh_pair.bounding_box()
    if extra_box is not None:
        lo = np.minimum(lo, extra_box[0])
        hi = np.maximum(hi, extra_box[1])
    ext = hi - lo
    scale = max(float(ext.max()), 1e-300)
    for d in range(3):
        if ext[d] <= 1e-12 * scale:
            raise CompositionError(
                f"mesh is flat along axis {d}; inflate it by a small thickness along that axis"
            )
    return lo - margin * ext, hi + margin * ext


def build_deformation_trivariate(mesh_pair: MeshPair, degrees=(1, 1, 1), box=None, solver: str = "lsq"):
    """Trivariate Bezier map fitted so that ``T(X) ~ X'``.

    ``T`` starts as the identity on its box (so the parametric coordinates
    of the mesh points are the points themselves) and its control points
    are then fitted by least squares (minimum-norm displacement from the
    identity where the data leaves freedom) or by L-BFGS.
    """
    lo, hi = box if box is not None else deformation_box(mesh_pair)
    T0 = identity_trivariate(lo, hi, tuple(int(d) for d in degrees))
    problem = FitProblem(T0, mesh_pair.initial, mesh_pair.deformed)
    report = FitReport()
    report.record(T0, problem.param_coords, problem.targets)
    if solver == "opt":
        T, rep = fit_opt(problem)
        report.iterations = rep.iterations
        report.warnings += rep.warnings
    else:
        T = _lsq_step(problem, strict=False)
        report.iterations = 1
    report.record(T, problem.param_coords, problem.targets)
    return T, report


def auto_trivariate(mesh_pair: MeshPair, target_error: float, start=(1, 1, 1), max_degrees=(8, 8, 4), box=None):
    """Greedy degree selection: elevate the single direction that lowers the residual most.

    Returns:
        ``(T, report, history)`` where history lists ``(degrees, max_error)``.
    """
    box = box if box is not None else deformation_box(mesh_pair)
    degrees = tuple(start)
    T, rep = build_deformation_trivariate(mesh_pair, degrees, box)
    history = [(degrees, rep.final_max_error)]
    while rep.final_max_error > target_error:
        best = None
        for d in range(3):
            if degrees[d] >= max_degrees[d]:
                continue
            trial = tuple(g + (1 if i == d else 0) for i, g in enumerate(degrees))
            cand = build_deformation_trivariate(mesh_pair, trial, box)
            if best is None or cand[1].squared_history[-1] < best[2][1].squared_history[-1]:
                best = (trial, d, cand)
        if best is None:
            rep.warnings.append("degree limits reached before the target error")
            break
        degrees, _, (T, rep) = best
        history.append((degrees, rep.final_max_error))
    return T, rep, history


def invert_trivariate(T: Spline, points, seeds=None, tol: float = 1e-12, max_iterations: int = 50) -> np.ndarray:
    """Newton solve of ``T(xi) = x`` for every point (fallback when ``T`` is not the identity)."""
    X = np.asarray(points, dtype=float).reshape(-1, 3)
    xi = X.copy() if seeds is None else np.array(seeds, dtype=float).reshape(-1, 3)
    lo = np.array([a for a, _ in T.domain])
    hi = np.array([b for _, b in T.domain])
    for _ in range(max_iterations):
        xi = np.clip(xi, lo, hi)
        S, J = jacobian(T, xi)
        r = X - S
        if np.abs(r).max() <= tol * max(1.0, np.abs(X).max()):
            break
        xi = xi + np.linalg.solve(J, r[..., None])[..., 0]
    return np.clip(xi, lo, hi)


@dataclass
class CompositionReport:
    trivariate_degrees: tuple[int, int, int]
    t_fit: FitReport
    entity_degrees: dict = field(default_factory=dict)
    errors_composed: dict = field(default_factory=dict)
    errors_reduced: dict | None = None
    reductions: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    failed: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "trivariate_degrees": list(self.trivariate_degrees),
            "t_fit": self.t_fit.to_dict(),
            "entity_degrees": {str(k): list(v) for k, v in self.entity_degrees.items()},
            "errors_composed": self.errors_composed,
            "errors_reduced": self.errors_reduced,
            "reductions": {str(k): v.to_dict() for k, v in self.reductions.items()},
            "warnings": self.warnings,
            "failed": self.failed,
        }


def reconstruct_by_composition(
    model: GeometryModel,
    mesh_pair: MeshPair,
    degrees=(3, 2, 1),
    reduce_to=None,
    assignments=None,
    mask_tolerance: float | None = None,
    reduce_epsilon: float | None = None,
    delta: float = 1.05,
    solver: str = "lsq",
    jobs: int = 1,
):
    """Deform every entity through one fitted trivariate map.

    The map's box covers the mesh and every control point of the model, so
    all entities can be composed.  Errors are measured at the assigned mesh
    points, before and (with ``reduce_to``) after low-degree approximation.

    Returns:
        ``(new_model, report)``.
    """
    box = deformation_box(mesh_pair, model.bounding_box())
    T, t_rep = build_deformation_trivariate(mesh_pair, degrees, box, solver)
    report = CompositionReport(tuple(int(d) for d in degrees), t_rep)
    if assignments is None:
        assignments = assign_points(model, mesh_pair, mask_tolerance, jobs)

    def run(entity):
        try:
            return compose(T, entity.spline), None
        except CompositionError as exc:
            return entity.spline, str(exc)

    composed = {}
    for e, (sp, err) in zip(model.entities, _map(run, list(model.entities), jobs)):
        composed[e.id] = sp
        report.entity_degrees[e.id] = sp.degrees
        if err:
            report.failed.append(e.id)
            report.warnings.append(f"entity {e.id}: {err}")
            log.warning("entity %s: %s", e.id, err)
    out = model.with_splines(composed)
    report.errors_composed = error_summary(model_errors(out, assignments, mesh_pair))
    if reduce_to is not None:
        def red(entity):
            return low_order_approximation(entity.spline, reduce_to, reduce_epsilon, delta)

        reduced = {}
        for e, (sp, rrep) in zip(out.entities, _map(red, list(out.entities), jobs)):
            reduced[e.id] = sp
            report.reductions[e.id] = rrep
            report.entity_degrees[e.id] = sp.degrees
            if not rrep.converged:
                report.warnings.append(f"entity {e.id}: reduction tolerance not reached")
        out = out.with_splines(reduced)
        report.errors_reduced = error_summary(model_errors(out, assignments, mesh_pair))
    return out, report
