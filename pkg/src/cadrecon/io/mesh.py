"""Mesh-correspondence files.

The native format is a whitespace-separated table.  A combined file has six
columns ``x y z x' y' z'``; separate files have three columns each and are
aligned by row.  ``#`` starts a comment; a header comment of the form
``# count: N`` is checked against the number of rows.  The point section of
legacy VTK files is also accepted on input.
"""

from __future__ import annotations

import io
import re

import numpy as np

from ..errors import MeshFormatError
from ..model import MeshPair

_COUNT = re.compile(r"#\s*count\s*[:=]\s*(\d+)", re.IGNORECASE)


def _text(data) -> str:
    return data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else str(data)


def _read_vtk(text: str) -> np.ndarray:
    tokens = text.split()
    try:
        i = next(k for k, t in enumerate(tokens) if t.upper() == "POINTS")
        n = int(tokens[i + 1])
        vals = np.array(tokens[i + 3 : i + 3 + 3 * n], dtype=float)
    except (StopIteration, ValueError, IndexError) as exc:
        raise MeshFormatError("legacy VTK file without a readable POINTS section") from exc
    if vals.size != 3 * n:
        raise MeshFormatError(f"VTK POINTS declares {n} points but holds {vals.size // 3}")
    return vals.reshape(n, 3)


def read_table(data, columns: int | None = None) -> np.ndarray:
    """Parse a point table; returns an ``(n, 3)`` or ``(n, 6)`` array."""
    text = _text(data)
    if text.lstrip().startswith("# vtk DataFile"):
        return _read_vtk(text)
    m = _COUNT.search(text)
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].split()
        if not body:
            continue
        try:
            rows.append([float(v) for v in body])
        except ValueError:
            raise MeshFormatError(f"line {lineno}: non-numeric value") from None
        if len(rows[-1]) != len(rows[0]):
            raise MeshFormatError(f"line {lineno}: expected {len(rows[0])} columns, found {len(rows[-1])}")
    arr = np.array(rows, dtype=float).reshape(len(rows), -1 if rows else 3)
    if columns is not None and arr.shape[1] != columns:
        raise MeshFormatError(f"expected {columns} columns, found {arr.shape[1]}")
    if arr.shape[1] not in (3, 6):
        raise MeshFormatError(f"expected 3 or 6 columns, found {arr.shape[1]}")
    if m and int(m.group(1)) != arr.shape[0]:
        raise MeshFormatError(f"header declares {m.group(1)} points, found {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise MeshFormatError("non-finite coordinates")
    return arr


def read_mesh_pair(initial=None, deformed=None, combined=None) -> MeshPair:
    """Build a :class:`MeshPair` from either two single-state tables or one combined table."""
    if combined is not None:
        if initial is not None or deformed is not None:
            raise MeshFormatError("give either a combined table or two single-state tables")
        arr = read_table(combined, columns=6)
        return MeshPair(arr[:, :3], arr[:, 3:])
    if initial is None or deformed is None:
        raise MeshFormatError("both initial and deformed point sets are required")
    return MeshPair(read_table(initial, columns=3), read_table(deformed, columns=3))


def write_mesh_pair(pair: MeshPair, units: str = "mm") -> bytes:
    """Combined table with 17 significant digits (exact for doubles)."""
    buf = io.StringIO()
    buf.write(f"# count: {len(pair)}\n# units: {units}\n# x y z x' y' z'\n")
    np.savetxt(buf, np.hstack([pair.initial, pair.deformed]), fmt="%.17g")
    return buf.getvalue().encode("utf-8")


def write_points(points: np.ndarray, units: str = "mm") -> bytes:
    buf = io.StringIO()
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    buf.write(f"# count: {pts.shape[0]}\n# units: {units}\n")
    np.savetxt(buf, pts, fmt="%.17g")
    return buf.getvalue().encode("utf-8")
