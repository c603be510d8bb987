"""IGES subset, mesh tables and the native JSON format."""

from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cadrecon.errors import CadReconError, IgesError, MeshFormatError
from cadrecon.generate import plate_case
from cadrecon.io import build_document, dump_model, load_model, read_iges, read_mesh_pair, write_iges, write_mesh_pair
from cadrecon.io.iges import IgesWarning, format_real, pack_parameters, tokenize
from cadrecon.io.mesh import read_table, write_points
from cadrecon.model import Entity, GeometryModel, MeshPair
from cadrecon.spline import Spline, elevate_degree, evaluate, parameter_grid
from conftest import make_random_spline

CURVE_PARAMS = "126,1,1,0,0,1,0,0.,0.,1.,1.,1.,1.,0.,0.,0.,1.,2.,3.,0.,1.;"
SURFACE_PARAMS = (
    "128,1,1,1,1,0,0,1,0,0,0.,0.,1.,1.,0.,0.,1.,1.,1.,1.,1.,1.,"
    "0.,0.,0.,2.,0.,0.,0.,1.,0.,2.,1.,1.,0.,1.,0.,1.;"
)


def _card(body: str, code: str, seq: int) -> str:
    return body.ljust(72)[:72] + code + str(seq).rjust(7)


def _hand_iges(records, pd=",", rd=";", width=64) -> str:
    """Assemble a file from ``(type, param_text)`` pairs, breaking lines after delimiters within ``width``."""
    glob = f"1H{pd}{pd}1H{rd}{pd}4Htest{pd}5Ht.igs{rd}"
    lines = [_card("hand made", "S", 1), _card(glob, "G", 1)]
    d, p = [], []
    for k, (etype, text) in enumerate(records):
        de = 2 * k + 1
        chunks, cur = [], ""
        for piece in text.replace(pd, pd + "\0").replace(rd, rd + "\0").split("\0"):
            if len(cur) + len(piece) > width:
                chunks.append(cur)
                cur = ""
            cur += piece
        chunks.append(cur)
        f1 = [etype, len(p) + 1, 0, 0, 0, 0, 0, 0, 0]
        f2 = [etype, 0, 0, len(chunks), 0, "", "", "", 0]
        d.append(_card("".join(str(f).rjust(8) for f in f1), "D", de))
        d.append(_card("".join(str(f).rjust(8) for f in f2), "D", de + 1))
        p += [chunk.ljust(64) + " " + str(de).rjust(7) for chunk in chunks]
    lines += d + [_card(x, "P", i + 1) for i, x in enumerate(p)]
    lines.append(_card(f"S      1G      1D{len(d):7d}P{len(p):7d}", "T", 1))
    return "\n".join(lines) + "\n"


def _model(*splines) -> GeometryModel:
    return GeometryModel(
        tuple(Entity(2 * i + 1, s, "curve" if s.dim_param == 1 else "surface") for i, s in enumerate(splines))
    )


class TestHandWritten:
    def test_line_curve(self):
        model, _ = read_iges(_hand_iges([(126, CURVE_PARAMS)]))
        (e,) = model.entities
        assert e.kind == "curve" and e.spline.degrees == (1,)
        np.testing.assert_allclose(evaluate(e.spline, [[0.5]]), [[0.5, 1.0, 1.5]])

    def test_bilinear_surface_first_index_fastest(self):
        model, _ = read_iges(_hand_iges([(128, SURFACE_PARAMS)]))
        s = model.entities[0].spline
        np.testing.assert_allclose(s.control_points[1, 0], [2, 0, 0])
        np.testing.assert_allclose(s.control_points[0, 1], [0, 1, 0])
        np.testing.assert_allclose(evaluate(s, [[0.5, 0.5]]), [[1.0, 0.5, 0.25]])  # one lifted corner of four

    def test_custom_delimiters_and_continuation(self):
        text = CURVE_PARAMS.replace(",", "/").replace(";", "#")
        model, doc = read_iges(_hand_iges([(126, text)], pd="/", rd="#", width=10))
        assert (doc.param_delim, doc.record_delim) == ("/", "#")
        np.testing.assert_allclose(model.entities[0].spline.control_points, [[0, 0, 0], [1, 2, 3]])

    def test_unsupported_entity(self):
        with pytest.raises(IgesError, match="110"):
            read_iges(_hand_iges([(110, "110,0.,0.,0.,1.,0.,0.;")]))

    def test_bad_sequence_number_reports_line(self):
        lines = _hand_iges([(126, CURVE_PARAMS)]).splitlines()
        lines[3] = lines[3][:73] + "      9"
        with pytest.raises(IgesError) as info:
            read_iges("\n".join(lines))
        assert info.value.line == 4

    def test_transform_rejected(self):
        text = _hand_iges([(126, CURVE_PARAMS)])
        lines = text.splitlines()
        lines[2] = lines[2][:48] + "       7" + lines[2][56:]
        with pytest.raises(IgesError, match="transformation"):
            read_iges("\n".join(lines))


class TestTokens:
    def test_hollerith_keeps_delimiters(self):
        assert tokenize("3Ha,b,1.5;", ",", ";") == ["3Ha,b", "1.5"]

    def test_format_real_is_lossless(self):
        for x in [0.1, 1 / 3, -2.5e-300, 1e22, np.pi]:
            s = format_real(x)
            assert "D" in s
            assert float(s.replace("D", "E")) == x

    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_format_real_roundtrip(self, x):
        assert float(format_real(x).replace("D", "E")) == x

    def test_packing_respects_width(self):
        toks = [format_real(v) for v in np.linspace(0, 1, 40)]
        lines = pack_parameters(toks)
        assert all(len(ln) == 64 for ln in lines)
        assert tokenize("".join(lines)) == toks


class TestRoundTrip:
    def test_random_splines_bit_exact(self, rng):
        splines = [make_random_spline(rng, d) for d in (1, 2, 1, 2)]
        model = _model(*splines)
        data = write_iges(build_document(model), model)
        back, _ = read_iges(data, infer_owners=False)
        for a, b in zip(model, back):
            np.testing.assert_array_equal(a.spline.control_points, b.spline.control_points)
            for ka, kb in zip(a.spline.knots, b.spline.knots):
                np.testing.assert_array_equal(ka, kb)
            if a.spline.is_rational:
                np.testing.assert_array_equal(a.spline.weights, b.spline.weights)

    def test_rewrite_is_stable(self):
        case = plate_case()
        data = write_iges(build_document(case.model, case.topology), case.model)
        model, doc = read_iges(data)
        assert write_iges(doc, model) == data
        assert [e.owner_ids for e in model] == [e.owner_ids for e in case.model]

    def test_topology_bytes_preserved(self):
        case = plate_case()
        data = write_iges(build_document(case.model, case.topology), case.model)
        model, doc = read_iges(data)
        moved = model.with_splines({e.id: e.spline.with_control_points(e.spline.control_points + 1.0) for e in model})
        back, _ = read_iges(write_iges(doc, moved))
        assert back.topology_blobs == model.topology_blobs
        assert len(back.topology_blobs) == len(case.topology)

    def test_empty_model(self):
        with pytest.raises(IgesError, match="empty"):
            write_iges(build_document(_model()), _model())

    def test_degree_cap_warning(self, line_curve):
        model = _model(line_curve)
        doc = build_document(model)
        high = model.with_splines({1: elevate_degree(line_curve, 0, 30)})
        with pytest.warns(IgesWarning):
            write_iges(doc, high)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            write_iges(doc, model)

    def test_kind_change_rejected(self, line_curve):
        model = _model(line_curve)
        k = [0, 0, 1, 1]
        flat = Spline((1, 1), (k, k), np.zeros((2, 2, 3)))
        with pytest.raises(IgesError):
            write_iges(build_document(model), GeometryModel((Entity(1, flat, "surface"),)))


class TestMesh:
    def test_three_points(self):
        X = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float)
        pair = read_mesh_pair(write_points(X), write_points(X + 1))
        np.testing.assert_array_equal(pair.deformed, X + 1)

    def test_count_mismatch(self):
        with pytest.raises(MeshFormatError, match="declares 4"):
            read_table("# count: 4\n0 0 0\n1 1 1\n")

    def test_row_mismatch(self):
        with pytest.raises(MeshFormatError):
            read_mesh_pair("0 0 0\n1 1 1\n", "0 0 0\n")

    def test_ragged_rows(self):
        with pytest.raises(MeshFormatError, match="line 2"):
            read_table("0 0 0\n1 1\n")

    def test_combined_roundtrip_bit_equal(self, rng):
        pair = MeshPair(rng.normal(size=(50, 3)), rng.normal(size=(50, 3)) * 1e5)
        back = read_mesh_pair(combined=write_mesh_pair(pair))
        np.testing.assert_array_equal(back.initial, pair.initial)
        np.testing.assert_array_equal(back.deformed, pair.deformed)

    def test_vtk_points(self):
        text = "# vtk DataFile Version 3.0\nx\nASCII\nDATASET POLYDATA\nPOINTS 2 float\n0 0 0 1 2 3\n"
        np.testing.assert_array_equal(read_table(text), [[0, 0, 0], [1, 2, 3]])


class TestNative:
    def test_roundtrip(self):
        case = plate_case()
        back = load_model(dump_model(case.model))
        assert back.ids == case.model.ids
        for a, b in zip(case.model, back):
            assert a.owner_ids == b.owner_ids
            g = parameter_grid(a.spline, 4)
            np.testing.assert_array_equal(evaluate(a.spline, g), evaluate(b.spline, g))

    def test_wrong_schema(self):
        with pytest.raises(CadReconError):
            load_model('{"schema": "other", "version": 1}')
