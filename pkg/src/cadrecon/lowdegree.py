"""Low-degree approximation of high-degree splines (iterated degree reduction).

Each step lowers one direction by one degree.  When the reduction error is
too large, knots are added in the worst span of the spline *before*
reduction and the step is redone; afterwards, spans whose control polygon
grew noticeably receive an extra knot, which keeps later reductions from
amplifying oscillations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import RefinementError
from .spline import (
    Spline,
    control_polygon_length,
    control_polygon_lengths,
    distinct_knots,
    evaluate,
    parameter_grid,
    reduce_degree_detailed,
    refine,
)

log = logging.getLogger(__name__)

GROWTH_LIMIT = 1.1
DEFAULT_DELTA = 1.05
KNOT_BUDGET = 200
RELATIVE_EPSILON = 1e-8


@dataclass
class ReductionReport:
    steps: list[dict] = field(default_factory=list)
    final_max_deviation: float = 0.0
    converged: bool = True
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "final_max_deviation": self.final_max_deviation,
            "converged": self.converged,
            "warnings": self.warnings,
        }


def normalize_weights(spline: Spline) -> Spline:
    """Divide all weights by the largest one (geometry is unchanged)."""
    if not spline.is_rational:
        return spline
    return Spline(spline.degrees, spline.knots, spline.control_points, spline.weights / spline.weights.max())


def default_epsilon(spline: Spline) -> float:
    P = spline.control_points.reshape(-1, spline.dim_phys)
    diag = float(np.linalg.norm(P.max(axis=0) - P.min(axis=0)))
    return RELATIVE_EPSILON * diag if diag > 0 else 1e-12


def deviation(a: Spline, b: Spline, per_span: int = 8) -> float:
    """Maximum distance between two splines on a grid refined per knot span of ``a``."""
    counts = [per_span * (distinct_knots(k)[0].size - 1) + 1 for k in a.knots]
    grid = parameter_grid(a, counts)
    return float(np.linalg.norm(evaluate(a, grid) - evaluate(b, grid), axis=1).max())


def _targets(target_degree, dim: int) -> tuple[int, ...]:
    t = tuple(int(v) for v in np.broadcast_to(np.atleast_1d(target_degree), (dim,)))
    if min(t) < 1:
        raise RefinementError("target degree must be at least 1")
    return t


def _graded_midpoints(values: np.ndarray, j: int) -> np.ndarray:
    """Midpoint of span ``j`` plus those of neighbours more than twice as wide as its halves.

    Neighbours share a control point with the split span; without this
    grading the shared value stays fixed by a wide neighbour and repeated
    bisection toward a breakpoint stalls.
    """
    width = np.diff(values)
    half = 0.5 * width[j]
    picks = [j] + [k for k in (j - 1, j + 1) if 0 <= k < width.size and width[k] > 2 * half]
    return np.array(sorted(0.5 * (values[k] + values[k + 1]) for k in picks))


def low_order_approximation(
    spline: Spline,
    target_degree=4,
    epsilon: float | None = None,
    delta: float = DEFAULT_DELTA,
    knot_budget: int = KNOT_BUDGET,
) -> tuple[Spline, ReductionReport]:
    """Reduce ``spline`` to at most ``target_degree`` in every direction.

    Args:
        spline: Input spline (typically a composition result).
        target_degree: One degree for all directions or one per direction.
        epsilon: Accepted error of a single reduction step; defaults to
            ``1e-8`` times the control-net bounding-box diagonal.
        delta: Per-span polygon growth ratio above which an extra knot is
            inserted after a step whose total polygon grew by more than 10 %.
        knot_budget: Maximum error-driven knot insertions per direction.

    Returns:
        ``(reduced, report)``.  If ``epsilon`` cannot be met within the
        budget the best reduction found is kept and ``report.converged`` is
        False.
    """
    targets = _targets(target_degree, spline.dim_param)
    report = ReductionReport()
    if all(p <= t for p, t in zip(spline.degrees, targets)):
        return spline, report
    eps = default_epsilon(spline) if epsilon is None else float(epsilon)
    original = spline
    S = normalize_weights(spline)
    inserted = [0] * S.dim_param
    while True:
        excess = [p - t for p, t in zip(S.degrees, targets)]
        if max(excess) <= 0:
            break
        d = int(np.argmax(S.degrees * (np.array(excess) > 0)))
        p = S.degrees[d]
        length_old = control_polygon_length(S)
        reduced, err, span_err, values = reduce_degree_detailed(S, d)
        added = 0
        while err > eps:
            if inserted[d] >= knot_budget:
                report.converged = False
                msg = f"direction {d}: error {err:.3e} above {eps:.3e} after {knot_budget} knot insertions"
                report.warnings.append(msg)
                log.warning(msg)
                break
            mids = _graded_midpoints(values, int(np.argmax(span_err)))
            times = min(p - targets[d] + 1, p)
            S = refine(S, d, np.repeat(mids, times))
            inserted[d] += mids.size
            added += mids.size
            reduced, err, span_err, values = reduce_degree_detailed(S, d)
        step = {"direction": d, "degree": p - 1, "error": err, "knots_inserted": added, "oscillation_knots": 0}
        ratio = control_polygon_length(reduced) / length_old if length_old > 0 else 1.0
        step["polygon_ratio"] = ratio
        if ratio > GROWTH_LIMIT:
            before = control_polygon_lengths(S, d)
            after = control_polygon_lengths(reduced, d)
            vals = distinct_knots(reduced.knots[d])[0]
            grow = np.divide(after, before, out=np.full_like(after, np.inf), where=before > 0)
            centres = 0.5 * (vals[:-1] + vals[1:])[grow > delta]
            if centres.size:
                reduced = refine(reduced, d, centres)
                step["oscillation_knots"] = int(centres.size)
        report.steps.append(step)
        S = reduced
    report.final_max_deviation = deviation(original, S)
    return S, report
