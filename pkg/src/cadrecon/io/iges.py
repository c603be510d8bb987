"""IGES subset: rational B-spline curves (126) and surfaces (128).

Every other entity is kept verbatim: its directory fields and the columns
1-64 of its parameter lines are re-emitted unchanged, so topology records
(composite curves, curves on surfaces, trimmed surfaces, ...) survive a
read/modify/write cycle byte for byte.  Only the parameter-data pointer,
the parameter line count and the sequence numbers are recomputed.

Entity ids in the resulting :class:`~cadrecon.model.GeometryModel` are the
directory-entry sequence numbers.
"""

from __future__ import annotations

import logging
import re
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..errors import IgesError, SplineError
from ..model import Entity, GeometryModel
from ..spline import Spline, extract

log = logging.getLogger(__name__)

CURVE, SURFACE = 126, 128
COMPOSITE, BOUNDARY, BOUNDED_SURFACE, CURVE_ON_SURFACE, TRIMMED_SURFACE = 102, 141, 143, 142, 144
# geometry the reader cannot convert; exporting as NURBS avoids them
UNSUPPORTED = {
    100: "circular arc",
    104: "conic arc",
    106: "copious data",
    108: "plane",
    110: "line",
    112: "parametric spline curve",
    114: "parametric spline surface",
    118: "ruled surface",
    120: "surface of revolution",
    122: "tabulated cylinder",
    130: "offset curve",
    140: "offset surface",
    190: "plane surface",
    192: "right circular cylindrical surface",
    194: "right circular conical surface",
    196: "spherical surface",
    198: "toroidal surface",
}
DEFAULT_DEGREE_CAP = 30
PARAM_WIDTH = 64


class IgesWarning(UserWarning):
    """Issued when written entities may be rejected by downstream CAD tools."""


# ---------------------------------------------------------------------------
# Document structure
# ---------------------------------------------------------------------------


@dataclass
class DirectoryEntry:
    """The two directory lines of an entity, as 9 raw 8-character fields each."""

    fields1: list[str]
    fields2: list[str]

    @property
    def entity_type(self) -> int:
        return int(self.fields1[0])

    @property
    def param_pointer(self) -> int:
        return int(self.fields1[1])

    @property
    def transform(self) -> int:
        f = self.fields1[6].strip()
        return int(f) if f else 0

    @property
    def param_count(self) -> int:
        return int(self.fields2[3])

    @property
    def form(self) -> int:
        f = self.fields2[4].strip()
        return int(f) if f else 0


@dataclass
class EntityRecord:
    number: int  # sequence number of the first directory line
    directory: DirectoryEntry
    param_lines: list[str]  # columns 1-64 of every parameter line

    @property
    def entity_type(self) -> int:
        return self.directory.entity_type


@dataclass
class IgesDocument:
    start: list[str] = field(default_factory=list)  # columns 1-72
    global_lines: list[str] = field(default_factory=list)  # columns 1-72
    records: list[EntityRecord] = field(default_factory=list)
    param_delim: str = ","
    record_delim: str = ";"

    def record(self, number: int) -> EntityRecord:
        for r in self.records:
            if r.number == number:
                return r
        raise KeyError(number)

    def topology_blobs(self) -> tuple[str, ...]:
        """Raw text of every non-spline entity (directory fields + parameter columns).

        The parameter pointer is blanked: it is file layout, renumbered on
        every write, not content of the record.
        """
        out = []
        for r in self.records:
            if r.entity_type in (CURVE, SURFACE):
                continue
            f1 = list(r.directory.fields1)
            f1[1] = " " * 8
            out.append("".join(f1) + "".join(r.directory.fields2) + "\n" + "\n".join(r.param_lines))
        return tuple(out)


# ---------------------------------------------------------------------------
# Free-format parameter parsing
# ---------------------------------------------------------------------------

_HOLLERITH = re.compile(r"\s*(\d+)H")


def tokenize(text: str, pd: str = ",", rd: str = ";") -> list[str]:
    """Split parameter text into raw tokens up to the record delimiter.

    Hollerith strings (``nHxxxx``) are returned whole, so delimiters inside
    them are not mistaken for separators.
    """
    tokens = []
    i, n = 0, len(text)
    while i < n:
        m = _HOLLERITH.match(text, i)
        if m:
            count = int(m.group(1))
            start = m.end()
            tok = text[i:start + count]
            i = start + count
        else:
            j = i
            while j < n and text[j] not in (pd, rd):
                j += 1
            tok = text[i:j].strip()
            i = j
        tokens.append(tok.strip() if not m else tok.lstrip())
        while i < n and text[i] == " ":
            i += 1
        if i >= n:
            break
        if text[i] == rd:
            return tokens
        if text[i] == pd:
            i += 1
            continue
        raise IgesError(f"unexpected character {text[i]!r} in parameter data")
    return tokens


def _real(tok: str) -> float:
    t = tok.strip().upper().replace("D", "E")
    if not t:
        return 0.0
    try:
        return float(t)
    except ValueError as exc:
        raise IgesError(f"invalid real {tok!r}") from exc


def _int(tok: str) -> int:
    t = tok.strip()
    if not t:
        return 0
    try:
        return int(t)
    except ValueError:
        v = _real(t)
        if v != int(v):
            raise IgesError(f"invalid integer {tok!r}")
        return int(v)


def hollerith(text: str) -> str:
    return f"{len(text)}H{text}"


def format_real(x: float) -> str:
    """17 significant digits with a D exponent (lossless for doubles)."""
    s = f"{float(x):.16E}"
    mant, exp = s.split("E")
    mant = mant.rstrip("0")
    if mant.endswith("."):
        mant += "0"
    return f"{mant}D{int(exp)}"


def _delimiters(global_text: str) -> tuple[str, str]:
    """Parameter and record delimiters declared at the start of the Global section."""
    pd, rd = ",", ";"
    i = 0
    m = re.match(r"\s*1H(.)", global_text)
    if m:
        pd = m.group(1)
        i = m.end()
    elif global_text.lstrip().startswith(","):
        i = global_text.index(",")
    else:
        raise IgesError("cannot read the parameter delimiter of the Global section")
    if i >= len(global_text) or global_text[i] != pd:
        raise IgesError("malformed delimiter declaration in the Global section")
    i += 1
    m = re.match(r"\s*1H(.)", global_text[i:])
    if m:
        rd = m.group(1)
    return pd, rd


# ---------------------------------------------------------------------------
# Reading
# ---------------------------------------------------------------------------


def _split_sections(data: bytes | str) -> dict:
    text = data.decode("latin-1") if isinstance(data, (bytes, bytearray)) else data
    sections = {k: [] for k in "SGDPT"}
    expected = {k: 1 for k in "SGDPT"}
    order = "SGDPT"
    current = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        line = raw.ljust(80)
        if len(line) != 80:
            raise IgesError("record longer than 80 columns", line=lineno)
        code = line[72]
        if code not in sections:
            raise IgesError(f"unknown section letter {code!r}", line=lineno)
        pos = order.index(code)
        if pos < current:
            raise IgesError(f"section {code} out of order", line=lineno)
        current = pos
        try:
            seq = int(line[73:80])
        except ValueError:
            raise IgesError("invalid sequence number", line=lineno) from None
        if seq != expected[code]:
            raise IgesError(f"sequence number {seq} in section {code}, expected {expected[code]}", line=lineno)
        expected[code] += 1
        sections[code].append((lineno, line))
    if not sections["D"] and not sections["G"]:
        raise IgesError("no Global or Directory section found")
    return sections


def parse_document(data: bytes | str) -> IgesDocument:
    """Parse the file structure without interpreting entities."""
    sec = _split_sections(data)
    doc = IgesDocument()
    doc.start = [line[:72] for _, line in sec["S"]]
    doc.global_lines = [line[:72] for _, line in sec["G"]]
    if doc.global_lines:
        doc.param_delim, doc.record_delim = _delimiters("".join(doc.global_lines))
    d = sec["D"]
    if len(d) % 2:
        raise IgesError("directory section has an odd number of lines", line=d[-1][0])
    plines = sec["P"]
    for k in range(0, len(d), 2):
        (ln1, l1), (_, l2) = d[k], d[k + 1]
        f1 = [l1[8 * i : 8 * i + 8] for i in range(9)]
        f2 = [l2[8 * i : 8 * i + 8] for i in range(9)]
        de = DirectoryEntry(f1, f2)
        try:
            ptr, count = de.param_pointer, de.param_count
            de.entity_type
        except ValueError:
            raise IgesError("malformed directory entry", line=ln1) from None
        if ptr < 1 or ptr + count - 1 > len(plines):
            raise IgesError("parameter pointer out of range", line=ln1)
        lines = [plines[ptr - 1 + i][1][:PARAM_WIDTH] for i in range(count)]
        doc.records.append(EntityRecord(k + 1, de, lines))
    return doc


def _params(doc: IgesDocument, rec: EntityRecord) -> list[str]:
    text = "".join(rec.param_lines)
    toks = tokenize(text, doc.param_delim, doc.record_delim)
    if not toks or _int(toks[0]) != rec.entity_type:
        raise IgesError(f"entity {rec.number}: parameter data does not start with its type")
    return toks[1:]


def _parse_curve(t: list[str]) -> Spline:
    K, M = _int(t[0]), _int(t[1])
    prop3 = _int(t[4])
    nk = K + M + 2
    i = 6
    knots = np.array([_real(x) for x in t[i : i + nk]])
    i += nk
    w = np.array([_real(x) for x in t[i : i + K + 1]])
    i += K + 1
    P = np.array([_real(x) for x in t[i : i + 3 * (K + 1)]]).reshape(K + 1, 3)
    i += 3 * (K + 1)
    v0, v1 = _real(t[i]), _real(t[i + 1])
    rational = prop3 == 0 and not np.allclose(w, w[0], rtol=0, atol=0)
    sp = Spline(M, (knots,), P, w if rational or prop3 == 0 else None)
    return _restrict(sp, [(v0, v1)])


def _parse_surface(t: list[str]) -> Spline:
    K1, K2, M1, M2 = (_int(x) for x in t[:4])
    prop3 = _int(t[6])
    i = 9
    n1, n2 = K1 + M1 + 2, K2 + M2 + 2
    ku = np.array([_real(x) for x in t[i : i + n1]])
    i += n1
    kv = np.array([_real(x) for x in t[i : i + n2]])
    i += n2
    count = (K1 + 1) * (K2 + 1)
    # first index varies fastest
    w = np.array([_real(x) for x in t[i : i + count]]).reshape(K2 + 1, K1 + 1).T
    i += count
    P = np.array([_real(x) for x in t[i : i + 3 * count]]).reshape(K2 + 1, K1 + 1, 3).transpose(1, 0, 2)
    i += 3 * count
    u0, u1, v0, v1 = (_real(x) for x in t[i : i + 4])
    sp = Spline((M1, M2), (ku, kv), P, w if prop3 == 0 else None)
    return _restrict(sp, [(u0, u1), (v0, v1)])


def _restrict(sp: Spline, ranges) -> Spline:
    for d, (a, b) in enumerate(ranges):
        lo, hi = sp.domain[d]
        if b > a and (a > lo or b < hi):
            sp = extract(sp, d, max(a, lo), min(b, hi))
    return sp


def _ownership(doc: IgesDocument, splines: dict) -> dict:
    """Curve id -> ordered owner surface ids from boundary/loop records."""
    types = {r.number: r.entity_type for r in doc.records}
    params = {}

    def p(num):
        if num not in params:
            params[num] = _params(doc, doc.record(num))
        return params[num]

    def curves_of(num, depth=0) -> list[int]:
        if depth > 20 or num not in types:
            return []
        t = types[num]
        if t == CURVE:
            return [num]
        if t == COMPOSITE:
            tok = p(num)
            n = _int(tok[0])
            return [c for x in tok[1 : 1 + n] for c in curves_of(_int(x), depth + 1)]
        return []

    owners: dict = {}

    def add(curve, surf):
        if surf in splines and splines[surf].dim_param == 2 and curve in splines:
            lst = owners.setdefault(curve, [])
            if surf not in lst:
                lst.append(surf)

    for r in doc.records:
        if r.entity_type == CURVE_ON_SURFACE:
            tok = p(r.number)
            surf = _int(tok[1])
            for ptr in (_int(tok[3]),):
                for c in curves_of(ptr):
                    add(c, surf)
        elif r.entity_type == BOUNDARY:
            tok = p(r.number)
            surf, n = _int(tok[2]), _int(tok[3])
            i = 4
            for _ in range(n):
                crv, k = _int(tok[i]), _int(tok[i + 2])
                for c in curves_of(crv):
                    add(c, surf)
                i += 3 + k
    return owners


def _infer_owners(curves: dict, surfaces: dict, tol: float) -> dict:
    from ..projection import project_array
    from ..spline import evaluate, parameter_grid

    owners = {}
    for cid, c in curves.items():
        pts = evaluate(c, parameter_grid(c, 7))
        for sid, s in surfaces.items():
            _, dist, _, _ = project_array(s, pts)
            if dist.max() <= tol:
                owners.setdefault(cid, []).append(sid)
    return owners


def read_iges(data: bytes | str, infer_owners: bool = True) -> tuple[GeometryModel, IgesDocument]:
    """Parse an IGES file into a model and a document for re-writing.

    Raises:
        IgesError: On malformed records (with the line number) or geometric
            entities other than rational B-splines.
    """
    doc = parse_document(data)
    splines: dict = {}
    for r in doc.records:
        t = r.entity_type
        if t in UNSUPPORTED:
            raise IgesError(
                f"entity {r.number} is a {UNSUPPORTED[t]} (type {t}); re-export the model as NURBS-only "
                "(rational B-spline curves and surfaces)"
            )
        if t not in (CURVE, SURFACE):
            continue
        if r.directory.transform:
            raise IgesError(f"entity {r.number}: transformation matrices on spline entities are not supported")
        try:
            tok = _params(doc, r)
            splines[r.number] = _parse_curve(tok) if t == CURVE else _parse_surface(tok)
        except (IndexError, SplineError) as exc:
            raise IgesError(f"entity {r.number}: invalid spline data ({exc})") from exc
    owners = _ownership(doc, splines)
    curves = {k: v for k, v in splines.items() if v.dim_param == 1}
    surfaces = {k: v for k, v in splines.items() if v.dim_param == 2}
    orphan = [c for c in curves if c not in owners]
    if infer_owners and orphan and surfaces:
        pts = np.concatenate([s.control_points.reshape(-1, 3) for s in splines.values()])
        tol = 1e-6 * max(1.0, float(np.linalg.norm(np.ptp(pts, axis=0))))
        inferred = _infer_owners({c: curves[c] for c in orphan}, surfaces, tol)
        if inferred:
            log.info("curve ownership inferred geometrically for %d curve(s)", len(inferred))
        owners.update(inferred)
    ents = []
    for r in doc.records:
        if r.number in splines:
            sp = splines[r.number]
            kind = "curve" if sp.dim_param == 1 else "surface"
            label = r.directory.fields2[7].strip()
            ents.append(Entity(r.number, sp, kind, tuple(owners.get(r.number, ())), label))
    return GeometryModel(tuple(ents), doc.topology_blobs()), doc


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------


def _curve_tokens(sp: Spline) -> list[str]:
    K = sp.shape[0] - 1
    M = sp.degrees[0]
    P = sp.control_points
    w = sp.weights if sp.is_rational else np.ones(K + 1)
    planar = int(np.linalg.matrix_rank(P - P[0], tol=1e-12 * max(1.0, np.abs(P).max())) <= 2)
    closed = int(np.allclose(P[0], P[-1], rtol=0, atol=1e-12))
    poly = int(not sp.is_rational)
    toks = [str(CURVE), str(K), str(M), str(planar), str(closed), str(poly), "0"]
    toks += [format_real(x) for x in sp.knots[0]]
    toks += [format_real(x) for x in w]
    toks += [format_real(x) for x in P.reshape(-1)]
    lo, hi = sp.domain[0]
    toks += [format_real(lo), format_real(hi)]
    if planar:
        n = _plane_normal(P)
        toks += [format_real(x) for x in n]
    return toks


def _plane_normal(P: np.ndarray) -> np.ndarray:
    c = P - P.mean(axis=0)
    if np.allclose(c, 0):
        return np.array([0.0, 0.0, 1.0])
    _, s, vt = np.linalg.svd(c)
    n = vt[-1]
    return n / np.linalg.norm(n)


def _surface_tokens(sp: Spline) -> list[str]:
    n1, n2 = sp.shape
    M1, M2 = sp.degrees
    P = sp.control_points
    w = sp.weights if sp.is_rational else np.ones((n1, n2))
    poly = int(not sp.is_rational)
    toks = [str(SURFACE), str(n1 - 1), str(n2 - 1), str(M1), str(M2), "0", "0", str(poly), "0", "0"]
    toks += [format_real(x) for x in sp.knots[0]]
    toks += [format_real(x) for x in sp.knots[1]]
    toks += [format_real(x) for x in w.T.reshape(-1)]
    toks += [format_real(x) for x in P.transpose(1, 0, 2).reshape(-1)]
    (u0, u1), (v0, v1) = sp.domain
    toks += [format_real(x) for x in (u0, u1, v0, v1)]
    return toks


def pack_parameters(tokens: list[str], pd: str = ",", rd: str = ";", width: int = PARAM_WIDTH) -> list[str]:
    """Lay tokens out on parameter lines of ``width`` columns without splitting numbers."""
    lines, cur = [], ""
    for k, tok in enumerate(tokens):
        piece = tok + (rd if k == len(tokens) - 1 else pd)
        if len(cur) + len(piece) <= width:
            cur += piece
            continue
        if cur:
            lines.append(cur)
            cur = ""
        while len(piece) > width:  # only long Hollerith strings get here
            lines.append(piece[:width])
            piece = piece[width:]
        cur = piece
    if cur:
        lines.append(cur)
    return [ln.ljust(width) for ln in lines]


def _field(value) -> str:
    return str(value).rjust(8)


def _line(body: str, code: str, seq: int) -> str:
    return f"{body:<72.72}{code}{seq:7d}"


def write_iges(document: IgesDocument, model: GeometryModel, degree_cap: int = DEFAULT_DEGREE_CAP) -> bytes:
    """Serialise ``document`` with the spline entities replaced by ``model``'s geometry.

    Raises:
        IgesError: If the model is empty or does not match the document.
    """
    if len(model) == 0:
        raise IgesError("cannot write an empty model")
    spline_records = {r.number: r for r in document.records if r.entity_type in (CURVE, SURFACE)}
    for e in model.entities:
        rec = spline_records.get(e.id)
        if rec is None:
            raise IgesError(f"entity {e.id} has no matching spline record in the document")
        want = CURVE if e.spline.dim_param == 1 else SURFACE
        if rec.entity_type != want:
            raise IgesError(f"entity {e.id}: kind changed from type {rec.entity_type}")
        if max(e.spline.degrees) > degree_cap:
            warnings.warn(
                f"entity {e.id} has degree {max(e.spline.degrees)} above {degree_cap}; some CAD tools reject it",
                IgesWarning,
                stacklevel=2,
            )
    pd, rd = document.param_delim, document.record_delim
    by_id = {e.id: e.spline for e in model.entities}
    out = [_line(s, "S", i + 1) for i, s in enumerate(document.start)]
    out += [_line(g, "G", i + 1) for i, g in enumerate(document.global_lines)]
    dlines, plines = [], []
    for r in document.records:
        if r.number in by_id:
            sp = by_id[r.number]
            toks = _curve_tokens(sp) if sp.dim_param == 1 else _surface_tokens(sp)
            body = pack_parameters(toks, pd, rd)
        else:
            body = r.param_lines
        f1 = list(r.directory.fields1)
        f2 = list(r.directory.fields2)
        f1[1] = _field(len(plines) + 1)
        f2[3] = _field(len(body))
        de = len(dlines) + 1
        dlines.append(_line("".join(f1), "D", de))
        dlines.append(_line("".join(f2), "D", de + 1))
        for b in body:
            plines.append(f"{b:<64.64} {de:7d}")
    out += dlines
    out += [_line(p, "P", i + 1) for i, p in enumerate(plines)]
    term = f"S{len(document.start):7d}G{len(document.global_lines):7d}D{len(dlines):7d}P{len(plines):7d}"
    out.append(_line(term, "T", 1))
    return ("\n".join(out) + "\n").encode("latin-1")


# ---------------------------------------------------------------------------
# Building documents from scratch
# ---------------------------------------------------------------------------


def global_section(
    pd: str = ",",
    rd: str = ";",
    filename: str = "model.igs",
    product: str = "cadrecon",
    max_coord: float = 1.0,
    timestamp: str = "20000101.000000",
) -> list[str]:
    """Global section lines (millimetre units, IGES 5.3)."""
    fields = [
        hollerith(pd),
        hollerith(rd),
        hollerith(product),
        hollerith(filename),
        hollerith(product),
        hollerith("1.0"),
        "32",
        "308",
        "15",
        "308",
        "15",
        hollerith(product),
        "1.0",
        "2",
        hollerith("MM"),
        "1",
        "0.01",
        hollerith(timestamp),
        "1.0D-8",
        format_real(max_coord),
        hollerith("unknown"),
        hollerith("unknown"),
        "11",
        "0",
        hollerith(timestamp),
    ]
    return [ln.rstrip() for ln in pack_parameters(fields, pd, rd, width=72)]


def build_document(
    model: GeometryModel,
    topology=(),
    start_text: str = "Generated by cadrecon",
    pd: str = ",",
    rd: str = ";",
    filename: str = "model.igs",
) -> IgesDocument:
    """Fresh document for ``model`` followed by raw ``(type, form, params)`` records.

    Model entity ids must equal their directory numbers (1, 3, 5, ... in
    model order); topology parameters reference those ids directly.
    """
    for i, e in enumerate(model.entities):
        if e.id != 2 * i + 1:
            raise IgesError("model entity ids must be 1, 3, 5, ... in order to build a document")
    pts = np.concatenate([e.spline.control_points.reshape(-1, 3) for e in model.entities]) if len(model) else np.zeros((1, 3))
    doc = IgesDocument(
        start=[start_text[i : i + 72] for i in range(0, max(len(start_text), 1), 72)],
        global_lines=global_section(pd, rd, filename, max_coord=float(np.abs(pts).max())),
        param_delim=pd,
        record_delim=rd,
    )

    def directory(etype: int, form: int, label: str, status: str) -> DirectoryEntry:
        f1 = [_field(etype), _field(0), _field(0), _field(0), _field(0), _field(0), _field(0), _field(0), status]
        f2 = [_field(etype), _field(0), _field(0), _field(0), _field(form), " " * 8, " " * 8, f"{label[:8]:>8}", _field(0)]
        return DirectoryEntry(f1, f2)

    number = 1
    for e in model.entities:
        etype = CURVE if e.spline.dim_param == 1 else SURFACE
        toks = _curve_tokens(e.spline) if etype == CURVE else _surface_tokens(e.spline)
        # curves bounding surfaces are physically dependent (status 01 in columns 3-4)
        status = "00010000" if e.owner_ids else "00000000"
        doc.records.append(EntityRecord(number, directory(etype, 0, "", status), pack_parameters(toks, pd, rd)))
        number += 2
    for etype, form, params in topology:
        toks = [str(etype)] + [p if isinstance(p, str) else str(p) for p in params]
        status = "00000000" if etype == TRIMMED_SURFACE else "00010000"
        doc.records.append(EntityRecord(number, directory(etype, form, "", status), pack_parameters(toks, pd, rd)))
        number += 2
    return doc
