"""Dense binary matrix files and JSON sidecars.

Layout: an 8-byte magic, two little-endian ``uint32`` (rows, cols), then
``rows * cols`` little-endian float64 values in row-major order.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .exceptions import ShapeError

MAGIC = b"JRMAT\x00\x01\x00"
_HEADER = struct.Struct("<8sII")


def write_matrix(path, a):
    a = np.asarray(a, dtype="<f8")
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise ShapeError(f"can only store 2-D arrays, got shape {a.shape}")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, a.shape[0], a.shape[1]))
        fh.write(np.ascontiguousarray(a).tobytes(order="C"))
    return path


def read_matrix(path):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ShapeError(f"{path}: file too short for header")
    magic, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ShapeError(f"{path}: bad magic {magic!r}")
    body = data[_HEADER.size:]
    if len(body) != 8 * rows * cols:
        raise ShapeError(f"{path}: expected {rows}x{cols} values, found {len(body) // 8}")
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).copy()


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_json(path, payload):
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_default))
    return path


def read_json(path):
    return json.loads(Path(path).read_text())
