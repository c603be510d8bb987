"""Model-level value types: geometry model, mesh pair, point assignment."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CadReconError, MeshFormatError
from .spline import Spline


@dataclass(frozen=True)
class Entity:
    """One spline entity of a CAD model.

    Attributes:
        id: Identifier, unique within the model (the IGES directory pointer
            for models read from IGES).
        spline: The geometry.
        kind: ``"curve"`` or ``"surface"``.
        owner_ids: Surfaces this curve bounds, in topology order.
        label: Free-form name.
    """

    id: int
    spline: Spline
    kind: str
    owner_ids: tuple[int, ...] = ()
    label: str = ""

    def __post_init__(self):
        expected = {1: "curve", 2: "surface"}.get(self.spline.dim_param)
        if self.kind != expected:
            raise CadReconError(f"entity {self.id}: kind {self.kind!r} does not match a {self.spline.dim_param}-parameter spline")
        object.__setattr__(self, "owner_ids", tuple(int(o) for o in self.owner_ids))

    def with_spline(self, spline: Spline) -> "Entity":
        return replace(self, spline=spline)


@dataclass(frozen=True)
class GeometryModel:
    """Ordered spline entities plus opaque topology records carried through untouched."""

    entities: tuple[Entity, ...]
    topology_blobs: tuple = ()

    def __post_init__(self):
        ents = tuple(self.entities)
        ids = [e.id for e in ents]
        if len(set(ids)) != len(ids):
            raise CadReconError("entity ids must be unique")
        surfaces = {e.id for e in ents if e.kind == "surface"}
        for e in ents:
            missing = [o for o in e.owner_ids if o not in surfaces]
            if missing:
                raise CadReconError(f"entity {e.id}: owner ids {missing} are not surfaces of the model")
        object.__setattr__(self, "entities", ents)
        object.__setattr__(self, "topology_blobs", tuple(self.topology_blobs))

    def __len__(self) -> int:
        return len(self.entities)

    def __iter__(self):
        return iter(self.entities)

    def by_id(self, entity_id) -> Entity:
        for e in self.entities:
            if e.id == entity_id:
                return e
        raise KeyError(entity_id)

    @property
    def ids(self) -> tuple:
        return tuple(e.id for e in self.entities)

    def with_splines(self, splines: dict) -> "GeometryModel":
        """New model with the given ``{id: Spline}`` replacements; order and topology kept."""
        ents = tuple(e.with_spline(splines[e.id]) if e.id in splines else e for e in self.entities)
        return GeometryModel(ents, self.topology_blobs)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        pts = np.concatenate([e.spline.control_points.reshape(-1, 3) for e in self.entities])
        return pts.min(axis=0), pts.max(axis=0)


@dataclass(frozen=True, eq=False)
class MeshPair:
    """Index-aligned initial and deformed point sets."""

    initial: np.ndarray
    deformed: np.ndarray

    def __post_init__(self):
        X = np.array(self.initial, dtype=float).reshape(-1, 3)
        Xd = np.array(self.deformed, dtype=float).reshape(-1, 3)
        if X.shape != Xd.shape:
            raise MeshFormatError(f"initial has {X.shape[0]} points, deformed has {Xd.shape[0]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Xd))):
            raise MeshFormatError("mesh coordinates must be finite")
        X.setflags(write=False)
        Xd.setflags(write=False)
        object.__setattr__(self, "initial", X)
        object.__setattr__(self, "deformed", Xd)

    def __len__(self) -> int:
        return int(self.initial.shape[0])

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.initial.min(axis=0), self.initial.max(axis=0)

    def diagonal(self) -> float:
        lo, hi = self.bounding_box()
        return float(np.linalg.norm(hi - lo))


@dataclass
class PointAssignment:
    """Mesh points lying on one entity, with their parametric coordinates."""

    entity_id: int
    mask: np.ndarray
    param_coords: np.ndarray
    distances: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self) -> int:
        return int(self.mask.size)
