"""Binary checkpoint format.

Layout (all integers little-endian u32)::

    b"LNNA" | version | count | count x (name_len, name utf-8, rank, extents..., f32 data)
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"LNNA"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointError("bad magic, not a checkpoint")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + n].decode("utf-8")
        off += n
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        size = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
        out[name] = arr.astype(np.float32)
    if off != len(blob):
        raise CheckpointError("trailing bytes after last tensor")
    return out


def save(path, tensors: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(tensors))


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
