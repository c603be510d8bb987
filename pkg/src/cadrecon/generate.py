"""Synthetic test cases: a plate with a cylindrical hole and a structured grid box.

The plate is built from untrimmed spline patches (two faces, four sides, two
rational half-cylinders) plus the curves bounding them.  Every curve records
its owning surfaces, and the boundary topology is described by composite
curve, curve-on-surface and trimmed-surface records that reference the
geometric entities.  Entity ids are assigned in the order the entities are
written (1, 3, 5, ...), matching directory-entry numbering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Entity, GeometryModel, MeshPair
from .reconstruct import prescribed_deformation
from .spline import Spline, greville_abscissae

SQRT_HALF = np.sqrt(0.5)
CUBIC4 = np.r_[[0.0] * 4, 0.25, 0.5, 0.75, [1.0] * 4]
CUBIC2 = np.r_[[0.0] * 4, 0.5, [1.0] * 4]
BEZIER3 = np.r_[[0.0] * 4, [1.0] * 4]
LINEAR = np.array([0.0, 0.0, 1.0, 1.0])
ARC_KNOTS = np.array([0.0, 0.0, 0.0, 0.5, 0.5, 1.0, 1.0, 1.0])
ARC_WEIGHTS = np.array([1.0, SQRT_HALF, 1.0, SQRT_HALF, 1.0])


@dataclass(frozen=True)
class PlateParams:
    length: float = 200.0
    width: float = 100.0
    thickness: float = 1.5
    hole_diameter: float = 50.0
    nx: int = 57
    ny: int = 29
    n_theta: int = 48

    def validate(self):
        if min(self.length, self.width, self.thickness, self.hole_diameter) <= 0:
            raise ValueError("plate dimensions must be positive")
        if self.hole_diameter >= min(self.length, self.width):
            raise ValueError("hole does not fit into the plate")
        if self.nx < 2 or self.ny < 2 or self.n_theta < 4:
            raise ValueError("mesh resolution too small")


@dataclass
class GeneratedCase:
    model: GeometryModel
    mesh_pair: MeshPair
    topology: list  # (entity_type, form, params) records referencing entity ids


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


def _linear_curve(a, b, knots) -> Spline:
    """Straight segment from ``a`` to ``b`` with control points at the Greville points."""
    p = int(np.count_nonzero(knots == knots[0])) - 1
    g = greville_abscissae(knots, p)
    a, b = np.asarray(a, float), np.asarray(b, float)
    return Spline(p, (knots,), a + g[:, None] * (b - a))


def _bilinear_patch(origin, du, dv, ku, kv) -> Spline:
    """Planar parallelogram patch ``origin + u du + v dv`` (exact at any degree)."""
    pu = int(np.count_nonzero(ku == ku[0])) - 1
    pv = int(np.count_nonzero(kv == kv[0])) - 1
    gu = greville_abscissae(ku, pu)
    gv = greville_abscissae(kv, pv)
    P = np.asarray(origin, float) + gu[:, None, None] * np.asarray(du, float) + gv[None, :, None] * np.asarray(dv, float)
    return Spline((pu, pv), (ku, kv), P)


def _half_circle(radius: float, z: float, upper: bool) -> tuple[np.ndarray, np.ndarray]:
    r = radius
    s = 1.0 if upper else -1.0
    P = np.array([[r, 0, z], [r, s * r, z], [0, s * r, z], [-r, s * r, z], [-r, 0, z]], dtype=float)
    return P, ARC_WEIGHTS.copy()


def plate_geometry(params: PlateParams = PlateParams()):
    """Entities and topology records of the plate analog.

    Returns:
        ``(model, topology)``.
    """
    params.validate()
    L, W, H, R = params.length, params.width, params.thickness, params.hole_diameter / 2
    x0, x1, y0, y1 = -L / 2, L / 2, -W / 2, W / 2
    surfaces = {
        "top": _bilinear_patch([x0, y0, H], [L, 0, 0], [0, W, 0], CUBIC4, CUBIC2),
        "bottom": _bilinear_patch([x0, y0, 0], [L, 0, 0], [0, W, 0], CUBIC4, CUBIC2),
        "front": _bilinear_patch([x0, y0, 0], [L, 0, 0], [0, 0, H], CUBIC4, LINEAR),
        "back": _bilinear_patch([x0, y1, 0], [L, 0, 0], [0, 0, H], CUBIC4, LINEAR),
        "left": _bilinear_patch([x0, y0, 0], [0, W, 0], [0, 0, H], CUBIC2, LINEAR),
        "right": _bilinear_patch([x1, y0, 0], [0, W, 0], [0, 0, H], CUBIC2, LINEAR),
    }
    for name, upper in (("hole_upper", True), ("hole_lower", False)):
        P0, w = _half_circle(R, 0.0, upper)
        P1, _ = _half_circle(R, H, upper)
        surfaces[name] = Spline((2, 1), (ARC_KNOTS, LINEAR), np.stack([P0, P1], axis=1), np.stack([w, w], axis=1))

    curves = {}
    owners = {}
    for z, face in ((H, "top"), (0.0, "bottom")):
        tag = face
        curves[f"{tag}_front"] = _linear_curve([x0, y0, z], [x1, y0, z], CUBIC4)
        owners[f"{tag}_front"] = (face, "front")
        curves[f"{tag}_back"] = _linear_curve([x0, y1, z], [x1, y1, z], CUBIC4)
        owners[f"{tag}_back"] = (face, "back")
        curves[f"{tag}_left"] = _linear_curve([x0, y0, z], [x0, y1, z], CUBIC2)
        owners[f"{tag}_left"] = (face, "left")
        curves[f"{tag}_right"] = _linear_curve([x1, y0, z], [x1, y1, z], CUBIC2)
        owners[f"{tag}_right"] = (face, "right")
    for cx, cy, a, b in ((x0, y0, "front", "left"), (x1, y0, "front", "right"), (x1, y1, "back", "right"), (x0, y1, "back", "left")):
        name = f"vertical_{a}_{b}"
        curves[name] = _linear_curve([cx, cy, 0], [cx, cy, H], BEZIER3)
        owners[name] = (a, b)
    for z, face in ((H, "top"), (0.0, "bottom")):
        for half, upper in (("upper", True), ("lower", False)):
            P, w = _half_circle(R, z, upper)
            name = f"{face}_arc_{half}"
            curves[name] = Spline(2, (ARC_KNOTS,), P, w)
            owners[name] = (face, f"hole_{half}")
    for sx in (1.0, -1.0):
        name = "seam_pos" if sx > 0 else "seam_neg"
        curves[name] = _linear_curve([sx * R, 0, 0], [sx * R, 0, H], BEZIER3)
        owners[name] = ("hole_upper", "hole_lower")

    ids = {}
    entities = []
    for name, sp in list(surfaces.items()) + list(curves.items()):
        ids[name] = 2 * len(entities) + 1
        entities.append((name, sp))
    ents = []
    for name, sp in entities:
        kind = "surface" if sp.dim_param == 2 else "curve"
        own = tuple(ids[o] for o in owners.get(name, ()))
        ents.append(Entity(ids[name], sp, kind, own, name))
    model = GeometryModel(tuple(ents))

    loops = {
        "top": [["top_front", "top_right", "top_back", "top_left"], ["top_arc_upper", "top_arc_lower"]],
        "bottom": [["bottom_front", "bottom_right", "bottom_back", "bottom_left"], ["bottom_arc_upper", "bottom_arc_lower"]],
        "front": [["bottom_front", "vertical_front_right", "top_front", "vertical_front_left"]],
        "back": [["bottom_back", "vertical_back_right", "top_back", "vertical_back_left"]],
        "left": [["bottom_left", "vertical_back_left", "top_left", "vertical_front_left"]],
        "right": [["bottom_right", "vertical_back_right", "top_right", "vertical_front_right"]],
        "hole_upper": [["bottom_arc_upper", "seam_neg", "top_arc_upper", "seam_pos"]],
        "hole_lower": [["bottom_arc_lower", "seam_neg", "top_arc_lower", "seam_pos"]],
    }
    return model, _topology_records(model, ids, loops)


def _topology_records(model: GeometryModel, ids: dict, loops: dict) -> list:
    """Composite curves (102), curves on surface (142) and trimmed surfaces (144)."""
    records = []
    next_id = 2 * len(model.entities) + 1

    def add(etype, form, params):
        nonlocal next_id
        records.append((etype, form, params))
        next_id += 2
        return next_id - 2

    for face, face_loops in loops.items():
        surf = ids[face]
        cos = []
        for loop in face_loops:
            comp = add(102, 0, [len(loop)] + [ids[c] for c in loop])
            # CRTN=1 (projection), SPTR, BPTR=0 (no parameter-space curve), CPTR, PREF=2
            cos.append(add(142, 0, [1, surf, 0, comp, 2]))
        add(144, 0, [surf, 1, len(cos) - 1] + cos)
    return records


# ---------------------------------------------------------------------------
# Mesh
# ---------------------------------------------------------------------------


def plate_mesh(params: PlateParams = PlateParams()) -> np.ndarray:
    """Structured surface points of the plate analog (no points inside the hole)."""
    params.validate()
    L, W, H, R = params.length, params.width, params.thickness, params.hole_diameter / 2
    xs = np.linspace(-L / 2, L / 2, params.nx)
    ys = np.linspace(-W / 2, W / 2, params.ny)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    gx, gy = gx.ravel(), gy.ravel()
    outside = np.hypot(gx, gy) > R * (1 + 1e-9)
    gx, gy = gx[outside], gy[outside]
    faces = [np.column_stack([gx, gy, np.full(gx.size, z)]) for z in (0.0, H)]
    # mid-thickness row around the outer boundary
    mids = []
    for x in xs:
        mids += [[x, -W / 2, H / 2], [x, W / 2, H / 2]]
    for y in ys[1:-1]:
        mids += [[-L / 2, y, H / 2], [L / 2, y, H / 2]]
    t = np.linspace(0.0, 2 * np.pi, params.n_theta, endpoint=False)
    ring = [np.column_stack([R * np.cos(t), R * np.sin(t), np.full(t.size, z)]) for z in (0.0, H / 2, H)]
    return np.concatenate(faces + [np.array(mids)] + ring)


def grid_points(n=(10, 10, 3), size=(200.0, 100.0, 1.5)) -> np.ndarray:
    """Regular ``n[0] x n[1] x n[2]`` grid scaled to ``size`` and centred in x and y."""
    axes = [np.linspace(0.0, s, k) - (s / 2 if d < 2 else 0.0) for d, (k, s) in enumerate(zip(n, size))]
    g = np.meshgrid(*axes, indexing="ij")
    return np.stack([a.ravel() for a in g], axis=-1)


def box_geometry(size=(200.0, 100.0, 1.5)):
    """Six bilinear faces of an axis-aligned box (model for the grid case)."""
    L, W, H = size
    x0, y0 = -L / 2, -W / 2
    lin = LINEAR
    faces = [
        ("bottom", [x0, y0, 0], [L, 0, 0], [0, W, 0]),
        ("top", [x0, y0, H], [L, 0, 0], [0, W, 0]),
        ("front", [x0, y0, 0], [L, 0, 0], [0, 0, H]),
        ("back", [x0, -y0, 0], [L, 0, 0], [0, 0, H]),
        ("left", [x0, y0, 0], [0, W, 0], [0, 0, H]),
        ("right", [-x0, y0, 0], [0, W, 0], [0, 0, H]),
    ]
    ents = [Entity(2 * i + 1, _bilinear_patch(o, du, dv, lin, lin), "surface", (), name) for i, (name, o, du, dv) in enumerate(faces)]
    return GeometryModel(tuple(ents)), []


# ---------------------------------------------------------------------------
# Deformations
# ---------------------------------------------------------------------------


def bending(points, deflection: float = 18.88, ripple: float = 0.12, thickness_mid: float | None = None) -> np.ndarray:
    """Smooth plate bending scaled to a maximum displacement of ``deflection``.

    The mid-surface deflects by ``w(x, y) = s(x) (1 + ripple * cos(pi y / b))``
    with ``s`` a half-cosine rising along x; points off the mid-surface rotate
    with the normal (thin-plate kinematics), so the map is linear through the
    thickness.
    """
    X = np.asarray(points, dtype=float).reshape(-1, 3)
    lo, hi = X.min(axis=0), X.max(axis=0)
    a = (hi[0] - lo[0]) / 2
    b = (hi[1] - lo[1]) / 2
    cx, cy = (hi[0] + lo[0]) / 2, (hi[1] + lo[1]) / 2
    zm = (hi[2] + lo[2]) / 2 if thickness_mid is None else thickness_mid
    xi = (X[:, 0] - cx) / a  # [-1, 1]
    eta = (X[:, 1] - cy) / b
    s = 1.0 - np.cos(0.5 * np.pi * (xi + 1.0))
    ds = 0.5 * np.pi / a * np.sin(0.5 * np.pi * (xi + 1.0))
    g = 1.0 + ripple * np.cos(np.pi * eta)
    dg = -ripple * np.pi / b * np.sin(np.pi * eta)
    w = s * g
    wx, wy = ds * g, s * dg
    h = X[:, 2] - zm
    d = np.column_stack([-h * wx, -h * wy, w])
    scale = deflection / np.linalg.norm(d, axis=1).max()
    return X + scale * d


def affine(points, matrix=None, offset=None) -> np.ndarray:
    X = np.asarray(points, dtype=float).reshape(-1, 3)
    A = np.eye(3) if matrix is None else np.asarray(matrix, dtype=float)
    b = np.zeros(3) if offset is None else np.asarray(offset, dtype=float)
    return X @ A.T + b


def deform(points, preset: str = "bending", **kw) -> np.ndarray:
    """Apply a named deformation preset: ``bending``, ``radial``, ``affine``, ``translate`` or ``identity``."""
    if preset == "bending":
        return bending(points, kw.get("deflection", 18.88), kw.get("ripple", 0.12))
    if preset == "radial":
        return prescribed_deformation(points, kw.get("c", 0.15))
    if preset == "affine":
        return affine(points, kw.get("matrix"), kw.get("offset"))
    if preset == "translate":
        return affine(points, None, kw.get("offset", (1.0, 0.0, 0.0)))
    if preset == "identity":
        return np.asarray(points, dtype=float).copy()
    raise ValueError(f"unknown deformation preset {preset!r}")


def plate_case(params: PlateParams = PlateParams(), preset: str = "bending", **kw) -> GeneratedCase:
    model, topology = plate_geometry(params)
    X = plate_mesh(params)
    return GeneratedCase(model, MeshPair(X, deform(X, preset, **kw)), topology)


def grid_case(n=(10, 10, 3), size=(200.0, 100.0, 1.5), preset: str = "radial", **kw) -> GeneratedCase:
    model, topology = box_geometry(size)
    X = grid_points(n, size)
    return GeneratedCase(model, MeshPair(X, deform(X, preset, **kw)), topology)
