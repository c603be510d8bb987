"""Exact JSON serialisation of geometry models (floats via ``repr``, lossless)."""

from __future__ import annotations

import json

import numpy as np

from ..errors import CadReconError
from ..model import Entity, GeometryModel
from ..spline import Spline

SCHEMA = "cadrecon.model"
VERSION = 1


def spline_to_dict(s: Spline) -> dict:
    return {
        "degrees": list(s.degrees),
        "knots": [k.tolist() for k in s.knots],
        "control_points": s.control_points.tolist(),
        "weights": None if s.weights is None else s.weights.tolist(),
    }


def spline_from_dict(d: dict) -> Spline:
    w = d.get("weights")
    return Spline(
        tuple(d["degrees"]),
        tuple(np.asarray(k, dtype=float) for k in d["knots"]),
        np.asarray(d["control_points"], dtype=float),
        None if w is None else np.asarray(w, dtype=float),
    )


def dumps(model: GeometryModel) -> str:
    doc = {
        "schema": SCHEMA,
        "version": VERSION,
        "entities": [
            {
                "id": e.id,
                "kind": e.kind,
                "label": e.label,
                "owner_ids": list(e.owner_ids),
                "spline": spline_to_dict(e.spline),
            }
            for e in model.entities
        ],
        "topology": [b if isinstance(b, str) else repr(b) for b in model.topology_blobs],
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def loads(text: str | bytes) -> GeometryModel:
    doc = json.loads(text)
    if doc.get("schema") != SCHEMA:
        raise CadReconError("not a cadrecon model file")
    if doc.get("version") != VERSION:
        raise CadReconError(f"unsupported model file version {doc.get('version')!r}")
    ents = tuple(
        Entity(e["id"], spline_from_dict(e["spline"]), e["kind"], tuple(e["owner_ids"]), e.get("label", ""))
        for e in doc["entities"]
    )
    return GeometryModel(ents, tuple(doc.get("topology", ())))
