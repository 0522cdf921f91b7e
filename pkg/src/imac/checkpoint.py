"""Checkpoint framing shared by every model.

    magic (4 bytes) | version u16 | meta_len u32 | meta (UTF-8 JSON of the
    constructor dims) | tensor_count u32 | per tensor: ndim u8, shape u32 x ndim,
    data f64 little-endian (row-major), in parameter declaration order.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(magic: bytes, meta: dict, arrays: Sequence[np.ndarray]) -> bytes:
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [magic, struct.pack("<HI", VERSION, len(meta_bytes)), meta_bytes, struct.pack("<I", len(arrays))]
    for a in arrays:
        a = np.ascontiguousarray(a, dtype="<f8")
        parts.append(struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.tobytes())
    return b"".join(parts)


def loads(buf: bytes, magic: bytes) -> tuple[dict, list[np.ndarray]]:
    if buf[:4] != magic:
        raise CheckpointError(f"bad magic {buf[:4]!r}, expected {magic!r}")
    try:
        version, meta_len = struct.unpack_from("<HI", buf, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        off = 10
        meta = json.loads(buf[off : off + meta_len].decode("utf-8"))
        off += meta_len
        (count,) = struct.unpack_from("<I", buf, off)
        off += 4
        arrays = []
        for _ in range(count):
            (ndim,) = struct.unpack_from("<B", buf, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            n = int(np.prod(shape)) if ndim else 1
            if off + 8 * n > len(buf):
                raise CheckpointError("truncated tensor data")
            arrays.append(np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64))
            off += 8 * n
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if off != len(buf):
        raise CheckpointError(f"{len(buf) - off} trailing bytes")
    return meta, arrays


def save(path, magic: bytes, meta: dict, arrays: Sequence[np.ndarray]) -> None:
    Path(path).write_bytes(dumps(magic, meta, arrays))


def load(path, magic: bytes) -> tuple[dict, list[np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing checkpoint: {path}")
    return loads(path.read_bytes(), magic)


def checksum(arrays: Sequence[np.ndarray]) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()
