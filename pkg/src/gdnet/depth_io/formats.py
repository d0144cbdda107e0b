"""Netpbm/PFM readers and writers plus the JSON sidecar.

* quantized depth: binary PGM (``P5``), 16-bit big-endian, maxval 65535
* error maps: binary PGM, 8-bit, maxval 255
* float depth: PFM (``Pf``), float32 little-endian, negative scale, rows
  stored bottom-to-top
* RGB: binary PPM (``P6``), 8-bit
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


class FormatError(ValueError):
    pass


def _read_header(buf: bytes, n_fields: int) -> tuple[list[bytes], int]:
    """Split ``n_fields`` whitespace-separated header tokens, skipping comments.

    Returns the tokens and the payload offset (one whitespace byte after the
    last token).
    """
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < n_fields:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated header")
        tokens.append(buf[start:pos])
    return tokens, pos + 1


def _dims(tokens: list[bytes]) -> tuple[int, int]:
    try:
        w, h = int(tokens[1]), int(tokens[2])
    except ValueError:
        raise FormatError(f"malformed dimensions {tokens[1:3]!r}") from None
    if w <= 0 or h <= 0:
        raise FormatError(f"non-positive dimensions {w}x{h}")
    return w, h


def write_pgm(path, levels: np.ndarray, maxval: int = 65535) -> None:
    levels = np.asarray(levels)
    if levels.ndim != 2:
        raise FormatError(f"PGM needs a 2-D raster, got shape {levels.shape}")
    if not 0 < maxval <= 65535:
        raise FormatError(f"invalid maxval {maxval}")
    if levels.min(initial=0) < 0 or levels.max(initial=0) > maxval:
        raise FormatError(f"levels outside [0, {maxval}]")
    dtype = ">u2" if maxval > 255 else "u1"
    h, w = levels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(levels, dtype=dtype).tobytes())


def read_pgm(path, expected_maxval: int | None = 65535) -> np.ndarray:
    """Read a binary PGM.  Returns ``uint16`` (maxval > 255) or ``uint8`` levels."""
    buf = Path(path).read_bytes()
    tokens, offset = _read_header(buf, 4)
    if tokens[0] != b"P5":
        raise FormatError(f"bad PGM magic {tokens[0]!r}")
    w, h = _dims(tokens)
    try:
        maxval = int(tokens[3])
    except ValueError:
        raise FormatError(f"malformed maxval {tokens[3]!r}") from None
    if expected_maxval is not None and maxval != expected_maxval:
        raise FormatError(f"maxval {maxval} != expected {expected_maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    payload = buf[offset : offset + w * h * dtype.itemsize]
    if len(payload) != w * h * dtype.itemsize:
        raise FormatError("truncated PGM payload")
    out = np.frombuffer(payload, dtype=dtype).reshape(h, w)
    return out.astype(np.uint16 if maxval > 255 else np.uint8)


def write_pfm(path, data: np.ndarray) -> None:
    data = np.asarray(data)
    if data.ndim != 2:
        raise FormatError(f"PFM writer handles single-channel rasters, got shape {data.shape}")
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(np.flipud(data), dtype="<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a single-channel little-endian PFM as ``float32`` (top row first)."""
    buf = Path(path).read_bytes()
    tokens, offset = _read_header(buf, 4)
    if tokens[0] != b"Pf":
        raise FormatError(f"bad PFM magic {tokens[0]!r}")
    w, h = _dims(tokens)
    try:
        scale = float(tokens[3])
    except ValueError:
        raise FormatError(f"malformed PFM scale {tokens[3]!r}") from None
    if scale >= 0:
        raise FormatError("PFM scale must be negative: only little-endian payloads are supported")
    payload = buf[offset : offset + 4 * w * h]
    if len(payload) != 4 * w * h:
        raise FormatError("truncated PFM payload")
    return np.flipud(np.frombuffer(payload, dtype="<f4").reshape(h, w)).astype(np.float32)


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise FormatError(f"PPM needs an (h, w, 3) uint8 raster, got {rgb.shape} {rgb.dtype}")
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rgb).tobytes())


def read_ppm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    tokens, offset = _read_header(buf, 4)
    if tokens[0] != b"P6":
        raise FormatError(f"bad PPM magic {tokens[0]!r}")
    w, h = _dims(tokens)
    if tokens[3] != b"255":
        raise FormatError(f"PPM maxval {tokens[3]!r} != 255")
    payload = buf[offset : offset + 3 * w * h]
    if len(payload) != 3 * w * h:
        raise FormatError("truncated PPM payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).copy()


META_KEYS = ("d_min", "d_max", "bits", "scale", "noise_sigma", "seed")


def write_meta(path, meta: dict) -> None:
    missing = [k for k in META_KEYS if k not in meta]
    if missing:
        raise FormatError(f"sidecar missing keys {missing}")
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_meta(path) -> dict:
    meta = json.loads(Path(path).read_text())
    missing = [k for k in META_KEYS if k not in meta]
    if missing:
        raise FormatError(f"sidecar missing keys {missing}")
    return meta
