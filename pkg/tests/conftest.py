from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from cadrecon.spline import Spline  # noqa: E402
from oracles import random_knots, random_net  # noqa: E402

settings.register_profile(
    "default",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def make_random_spline(rng, dim_param: int, max_degree: int = 4, max_spans: int = 3, rational=None) -> Spline:
    degrees = tuple(int(rng.integers(1, max_degree + 1)) for _ in range(dim_param))
    knots = tuple(random_knots(rng, p, int(rng.integers(1, max_spans + 1))) for p in degrees)
    if rational is None:
        rational = bool(rng.integers(0, 2))
    P, W = random_net(rng, degrees, knots, rational)
    return Spline(degrees, knots, P, W)


@pytest.fixture
def random_spline(rng):
    def factory(dim_param: int = 2, **kw) -> Spline:
        return make_random_spline(rng, dim_param, **kw)

    return factory


@pytest.fixture
def line_curve() -> Spline:
    return Spline(1, ([0, 0, 1, 1],), [[0, 0, 0], [2, 0, 0]])


@pytest.fixture
def graph_surface(rng) -> Spline:
    """Bicubic height field over [0, 4] x [0, 2]: no self-intersections, single foot points."""
    ku = np.array([0, 0, 0, 0, 0.5, 1, 1, 1, 1], dtype=float)
    kv = np.array([0, 0, 0, 0, 1, 1, 1, 1], dtype=float)
    xs = np.linspace(0, 4, 5)
    ys = np.linspace(0, 2, 4)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    Z = 0.3 * rng.standard_normal(X.shape)
    return Spline((3, 3), (ku, kv), np.stack([X, Y, Z], axis=-1))


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record one acceptance line and fail the test when ``ok`` is false."""

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
