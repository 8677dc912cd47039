"""TNSR tensor files and JSON helpers.

Layout: magic ``TNSR``, u32 version (1), u32 order, ``order`` u32 dims, then
little-endian f64 entries in lexicographic order, last index fastest.
"""

from __future__ import annotations

import json
import math
import platform
import struct
import sys
from pathlib import Path

import numpy as np

MAGIC = b"TNSR"
VERSION = 1


def write_tnsr(path: str | Path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype="<f8")
    header = MAGIC + struct.pack("<II", VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes(order="C"))


def read_tnsr(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != MAGIC:
        raise ValueError(f"{path}: not a TNSR file")
    version, order = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported TNSR version {version}")
    dims = struct.unpack_from(f"<{order}I", data, 12)
    offset = 12 + 4 * order
    count = math.prod(dims)
    if len(data) != offset + 8 * count:
        raise ValueError(f"{path}: expected {count} entries")
    return np.frombuffer(data, dtype="<f8", count=count, offset=offset).astype(float).reshape(dims)


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_json(path: str | Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_default, allow_nan=True)
        fh.write("\n")


def versions() -> dict:
    import scipy

    from . import __version__

    return {
        "ovtensor": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": platform.platform(),
    }
