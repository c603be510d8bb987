"""Library-wide numerical settings."""

from __future__ import annotations

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class Settings:
    """Tolerances shared across modules.

    Attributes:
        geometric_tol: Absolute deviation (model units) under which two
            evaluations count as the same geometry after refinement.
        merge_tol: Points closer than this are treated as one point when
            assembling fitting data.
        param_tol: Slack allowed when a parameter sits marginally outside
            its knot span because of round-off; it is clamped silently.
    """

    geometric_tol: float = 1e-12
    merge_tol: float = 1e-7
    param_tol: float = 1e-12


_current = Settings()


def get_settings() -> Settings:
    return _current


def configure(**changes) -> Settings:
    """Replace selected fields of the active settings and return the new record."""
    global _current
    _current = replace(_current, **changes)
    return _current
