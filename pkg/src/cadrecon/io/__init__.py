"""File formats: IGES subset, mesh-correspondence tables, native JSON."""

from .iges import IgesDocument, IgesWarning, build_document, read_iges, write_iges
from .mesh import read_mesh_pair, write_mesh_pair
from .native import dumps as dump_model
from .native import loads as load_model

__all__ = [
    "IgesDocument",
    "IgesWarning",
    "build_document",
    "dump_model",
    "load_model",
    "read_iges",
    "read_mesh_pair",
    "write_iges",
    "write_mesh_pair",
]
