"""Versioned binary weight container.

Byte layout (all integers little-endian)::

    8 bytes   magic b"GDNETCK\\0"
    u32       format version (1)
    u32       length of the config JSON blob in bytes
    ...       config JSON, UTF-8
    u32       tensor count
    per tensor:
      u16     name length, then the UTF-8 name
      u8      ndim, then ndim x u32 dims
      ...     float32 little-endian data, C order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GDNETCK\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, config: dict, tensors: dict[str, np.ndarray]) -> None:
    blob = json.dumps(config, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode()
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a GDNet checkpoint")
    pos = 8

    def take(fmt: str):
        nonlocal pos
        vals = struct.unpack_from(fmt, buf, pos)
        pos += struct.calcsize(fmt)
        return vals

    try:
        version, n = take("<II")
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        config = json.loads(buf[pos : pos + n].decode())
        pos += n
        (count,) = take("<I")
        tensors = {}
        for _ in range(count):
            (ln,) = take("<H")
            name = buf[pos : pos + ln].decode()
            pos += ln
            (ndim,) = take("<B")
            shape = take(f"<{ndim}I")
            size = int(np.prod(shape, dtype=np.int64)) * 4
            if pos + size > len(buf):
                raise CheckpointError(f"{path}: truncated tensor {name!r}")
            tensors[name] = np.frombuffer(buf, dtype="<f4", count=size // 4, offset=pos).reshape(shape).copy()
            pos += size
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return config, tensors


def state_dict(module) -> dict[str, np.ndarray]:
    return {name: p.data for name, p in module.named_parameters()}


def load_state_dict(module, tensors: dict[str, np.ndarray]) -> None:
    params = dict(module.named_parameters())
    missing, extra = set(params) - set(tensors), set(tensors) - set(params)
    if missing or extra:
        raise CheckpointError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    for name, p in params.items():
        if p.shape != tensors[name].shape:
            raise CheckpointError(f"{name}: shape {tensors[name].shape} != {p.shape}")
        p.data = tensors[name].astype(p.dtype)
