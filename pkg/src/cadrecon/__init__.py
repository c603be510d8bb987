"""Reconstruct deformed spline CAD models from initial/deformed mesh point pairs.

Two routes are provided: refitting every entity to the deformed points
(:func:`reconstruct_by_fitting`) and composing every entity with one fitted
trivariate deformation map (:func:`reconstruct_by_composition`), optionally
followed by low-degree approximation.
"""

from .composition import compose, identity_trivariate
from .errors import (
    CadReconError,
    CompositionError,
    DomainError,
    FitError,
    IgesError,
    MeshFormatError,
    ProjectionError,
    RefinementError,
    SamplingError,
    SplineError,
)
from .fitting import FitProblem, FitReport, fit_lsq, fit_opt, spline_fit
from .lowdegree import low_order_approximation
from .model import Entity, GeometryModel, MeshPair, PointAssignment
from .projection import project_points
from .reconstruct import (
    FittingOptions,
    assign_points,
    build_deformation_trivariate,
    prescribed_deformation,
    reconstruct_by_composition,
    reconstruct_by_fitting,
)
from .spline import (
    KnotVector,
    Spline,
    derivative,
    elevate_degree,
    evaluate,
    insert_knot,
    reduce_degree,
    refine,
)

__version__ = "0.1.0"

__all__ = [
    "CadReconError",
    "CompositionError",
    "DomainError",
    "Entity",
    "FitError",
    "FitProblem",
    "FitReport",
    "FittingOptions",
    "GeometryModel",
    "IgesError",
    "KnotVector",
    "MeshFormatError",
    "MeshPair",
    "PointAssignment",
    "ProjectionError",
    "RefinementError",
    "SamplingError",
    "Spline",
    "SplineError",
    "assign_points",
    "build_deformation_trivariate",
    "compose",
    "derivative",
    "elevate_degree",
    "evaluate",
    "fit_lsq",
    "fit_opt",
    "identity_trivariate",
    "insert_knot",
    "low_order_approximation",
    "prescribed_deformation",
    "project_points",
    "reconstruct_by_composition",
    "reconstruct_by_fitting",
    "reduce_degree",
    "refine",
    "spline_fit",
]
