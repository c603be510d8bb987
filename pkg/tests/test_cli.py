"""Command-line entry point, run in-process on generated cases."""

from __future__ import annotations

import json

import numpy as np
import pytest

from cadrecon.cli import EXIT_OK, EXIT_USAGE, main
from cadrecon.io import read_iges, read_mesh_pair
from cadrecon.spline import evaluate, parameter_grid


def _run(*args) -> int:
    return main([str(a) for a in args])


def _max_change(a_path, b_path) -> float:
    a, _ = read_iges(a_path.read_bytes())
    b, _ = read_iges(b_path.read_bytes())
    worst = 0.0
    for ea, eb in zip(a, b):
        g = parameter_grid(ea.spline, 9)
        worst = max(worst, float(np.abs(evaluate(ea.spline, g) - evaluate(eb.spline, g)).max()))
    return worst


@pytest.fixture(scope="module")
def plate_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("plate")
    assert _run("generate", "plate", "--out", d) == EXIT_OK
    return d


@pytest.fixture(scope="module")
def identity_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("ident")
    assert _run("generate", "plate", "--preset", "radial", "--c", 0, "--out", d) == EXIT_OK
    return d


class TestGenerate:
    def test_files(self, plate_dir):
        for name in ("plate.igs", "plate_pair.txt", "plate_initial.txt", "plate_deformed.txt", "plate.json"):
            assert (plate_dir / name).exists()
        info = json.loads((plate_dir / "plate.json").read_text())
        assert info["surfaces"] == 8

    def test_zero_strength_is_identity(self, identity_dir):
        pair = read_mesh_pair(combined=(identity_dir / "plate_pair.txt").read_bytes())
        np.testing.assert_array_equal(pair.initial, pair.deformed)

    def test_invalid_plate(self, tmp_path):
        assert _run("generate", "plate", "--hole-diameter", 500, "--out", tmp_path) == EXIT_USAGE


class TestPipelines:
    def test_identity_fit(self, identity_dir, tmp_path):
        d = identity_dir
        rc = _run("fit", "--iges", d / "plate.igs", "--mesh-pair", d / "plate_pair.txt", "--out", tmp_path)
        assert rc == EXIT_OK
        assert _max_change(d / "plate.igs", tmp_path / "plate_fit.igs") < 1e-8

    def test_identity_compose(self, identity_dir, tmp_path):
        d = identity_dir
        rc = _run("compose", "--iges", d / "plate.igs", "--mesh-pair", d / "plate_pair.txt", "--out", tmp_path)
        assert rc == EXIT_OK
        assert _max_change(d / "plate.igs", tmp_path / "plate_compose.igs") < 1e-10

    def test_affine_compose_linear_map(self, tmp_path):
        src = tmp_path / "src"
        assert _run("generate", "plate", "--preset", "translate", "--offset", "1,2,3", "--out", src) == EXIT_OK
        rc = _run(
            "compose", "--iges", src / "plate.igs", "--mesh-pair", src / "plate_pair.txt",
            "--degrees", "1,1,1", "--out", tmp_path, "--report", tmp_path / "r.json",
        )
        assert rc == EXIT_OK
        assert json.loads((tmp_path / "r.json").read_text())["errors_composed"]["max"] < 1e-9

    def test_compose_reduce_keeps_error(self, tmp_path):
        src = tmp_path / "src"
        assert _run("generate", "plate", "--preset", "radial", "--out", src) == EXIT_OK
        rc = _run(
            "compose", "--iges", src / "plate.igs", "--mesh-pair", src / "plate_pair.txt",
            "--degrees", "2,2,1", "--reduce-to", 4, "--out", tmp_path, "--report", tmp_path / "r.json",
        )
        assert rc == EXIT_OK
        rep = json.loads((tmp_path / "r.json").read_text())
        before, after = rep["errors_composed"]["mean"], rep["errors_reduced"]["mean"]
        assert abs(after - before) <= 0.05 * before

    def test_report_with_original(self, identity_dir, tmp_path):
        d = identity_dir
        rc = _run(
            "report", "--iges", d / "plate.igs", "--mesh-pair", d / "plate_pair.txt",
            "--original", d / "plate.igs", "--report", tmp_path / "r.json",
        )
        assert rc == EXIT_OK
        rep = json.loads((tmp_path / "r.json").read_text())
        assert rep["mode"] == "parametric" and rep["errors"]["max"] < 1e-9

    def test_reports_are_deterministic(self, plate_dir, tmp_path):
        outs = []
        for k in range(2):
            r = tmp_path / f"r{k}.json"
            rc = _run(
                "fit", "--iges", plate_dir / "plate.igs", "--mesh-pair", plate_dir / "plate_pair.txt",
                "--epsilon", 0.05, "--out", tmp_path / str(k), "--report", r,
            )
            assert rc == EXIT_OK
            outs.append(r.read_bytes())
        assert outs[0] == outs[1]


class TestUsageErrors:
    def test_missing_file(self, tmp_path):
        assert _run("fit", "--iges", tmp_path / "nope.igs", "--mesh-pair", tmp_path / "x.txt") == EXIT_USAGE

    def test_missing_mesh(self, plate_dir):
        assert _run("fit", "--iges", plate_dir / "plate.igs") == EXIT_USAGE

    def test_bad_degrees(self, plate_dir):
        args = ["compose", "--iges", plate_dir / "plate.igs", "--mesh-pair", plate_dir / "plate_pair.txt"]
        assert _run(*args, "--degrees", "0,1,1") == EXIT_USAGE

    def test_malformed_iges(self, tmp_path):
        bad = tmp_path / "bad.igs"
        bad.write_text("not an iges file\n")
        assert _run("reduce", "--iges", bad, "--reduce-to", 3, "--out", tmp_path) == EXIT_USAGE
