"""CADCKPT1 binary checkpoints: a flat, ordered set of named float64 arrays.

Layout (all integers little-endian)::

    b"CADCKPT1"
    u32 count
    count x {
        u32 name_len, name_len bytes of UTF-8 name,
        u32 rank, rank x u64 dims,
        prod(dims) x f64 values (row-major)
    }
"""

from __future__ import annotations

import hashlib
import io
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"CADCKPT1"


class CheckpointError(ValueError):
    pass


def dumps(arrays: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")  # ascontiguousarray would promote 0-d to 1-d
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes(order="C"))
    return buf.getvalue()


def loads(blob: bytes) -> dict[str, np.ndarray]:
    view = memoryview(blob)
    if bytes(view[:8]) != MAGIC:
        raise CheckpointError("bad magic; not a CADCKPT1 file")
    pos = 8

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(view):
            raise CheckpointError("truncated checkpoint")
        vals = struct.unpack_from(fmt, view, pos)
        pos += size
        return vals

    (count,) = take("<I")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<I")
        if pos + name_len > len(view):
            raise CheckpointError("truncated checkpoint")
        name = bytes(view[pos : pos + name_len]).decode("utf-8")
        pos += name_len
        (rank,) = take("<I")
        dims = take(f"<{rank}Q") if rank else ()
        n = int(np.prod(dims)) if rank else 1
        nbytes = 8 * n
        if pos + nbytes > len(view):
            raise CheckpointError("truncated checkpoint")
        arr = np.frombuffer(view[pos : pos + nbytes], dtype="<f8").astype(np.float64).reshape(dims)
        pos += nbytes
        out[name] = arr
    if pos != len(view):
        raise CheckpointError(f"{len(view) - pos} trailing bytes after last array")
    return out


def save(path: str | Path, arrays: Mapping[str, np.ndarray]) -> str:
    """Write a checkpoint and return the SHA-256 hex digest of its bytes."""
    blob = dumps(arrays)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def load(path: str | Path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())


def digest(arrays: Mapping[str, np.ndarray]) -> str:
    return hashlib.sha256(dumps(arrays)).hexdigest()
