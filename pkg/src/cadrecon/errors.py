"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class CadReconError(Exception):
    """Base class for every error raised by the package."""


class SplineError(CadReconError, ValueError):
    """Invalid spline data (knots, degrees, control net, weights)."""


class DomainError(SplineError):
    """A parameter value lies outside the knot-vector span."""

    def __init__(self, direction: int, value: float, lo: float, hi: float):
        self.direction = direction
        self.value = value
        super().__init__(
            f"parameter {value!r} in direction {direction} outside [{lo!r}, {hi!r}]"
        )


class RefinementError(SplineError):
    """Knot insertion or degree change that cannot be performed."""


class ProjectionError(CadReconError):
    """Closest-point iteration did not converge; carries the best iterate."""

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class FitError(CadReconError):
    """Ill-posed fitting problem."""

    def __init__(self, message: str, unconstrained=()):
        super().__init__(message)
        self.unconstrained = tuple(unconstrained)


class SamplingError(CadReconError):
    """Additional correspondence data could not be generated."""


class CompositionError(CadReconError):
    """Functional composition preconditions violated."""


class IgesError(CadReconError):
    """Malformed or unsupported IGES content."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MeshFormatError(CadReconError):
    """Malformed mesh-correspondence data."""
