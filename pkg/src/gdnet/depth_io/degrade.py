"""Compressed-depth degradation: downsample, bit-depth compression, noise."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .depthmap import DepthMap

STAGES = ("downsample", "quantize", "noise")
_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class QuantizedDepth:
    levels: np.ndarray  # uint16, values in [0, 2**bits - 1]
    d_min: float
    d_max: float
    bits: int

    @property
    def max_level(self) -> int:
        return (1 << self.bits) - 1


@dataclass(frozen=True)
class DegradationSpec:
    scale: int = 4
    bits: int = 8
    noise_sigma: float = 0.095  # meters; 1% of the default [0.5, 10] range
    seed: int = 0
    downsample: str = "area"  # or "nearest"
    order: tuple[str, ...] = field(default=STAGES)

    def __post_init__(self):
        if int(self.scale) != self.scale or self.scale < 1:
            raise ValueError(f"scale must be a positive integer, got {self.scale}")
        if not 1 <= self.bits <= 16:
            raise ValueError(f"bits must be in 1..16, got {self.bits}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if self.downsample not in ("area", "nearest"):
            raise ValueError(f"unknown downsample mode {self.downsample!r}")
        if sorted(self.order) != sorted(STAGES):
            raise ValueError(f"order must be a permutation of {STAGES}")

    @classmethod
    def relative(cls, d_min: float, d_max: float, noise_frac: float = 0.01, **kw) -> "DegradationSpec":
        """Spec whose noise sigma is a fraction of the depth range."""
        return cls(noise_sigma=noise_frac * (d_max - d_min), **kw)

    def sidecar(self, d_min: float, d_max: float) -> dict:
        return {
            "d_min": d_min,
            "d_max": d_max,
            "bits": self.bits,
            "scale": self.scale,
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
        }


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_depth(d: DepthMap, bits: int) -> QuantizedDepth:
    if not 1 <= bits <= 16:
        raise ValueError(f"bits must be in 1..16, got {bits}")
    top = (1 << bits) - 1
    x = (d.data - d.d_min) / (d.d_max - d.d_min) * top
    levels = np.clip(round_half_away(x), 0, top).astype(np.uint16)
    return QuantizedDepth(levels=levels, d_min=d.d_min, d_max=d.d_max, bits=bits)


def dequantize_depth(q: QuantizedDepth) -> DepthMap:
    levels = np.asarray(q.levels)
    if levels.min(initial=0) < 0 or levels.max(initial=0) > q.max_level:
        raise ValueError(f"levels outside [0, {q.max_level}]")
    data = q.d_min + levels.astype(np.float64) / q.max_level * (q.d_max - q.d_min)
    return DepthMap(np.clip(data, q.d_min, q.d_max), q.d_min, q.d_max)


def downsample(data: np.ndarray, scale: int, mode: str = "area") -> np.ndarray:
    h, w = data.shape
    if h % scale or w % scale:
        raise ValueError(f"resolution {w}x{h} not divisible by scale {scale}")
    if mode == "nearest":
        return data[::scale, ::scale].copy()
    return data.reshape(h // scale, scale, w // scale, scale).mean(axis=(1, 3))


def degrade(d: DepthMap, spec: DegradationSpec) -> DepthMap:
    """Apply the stages of ``spec.order`` and clamp to the valid range."""
    if d.height % spec.scale or d.width % spec.scale:
        raise ValueError(f"resolution {d.width}x{d.height} not divisible by scale {spec.scale}")
    data = d.data
    for stage in spec.order:
        if stage == "downsample":
            data = downsample(data, spec.scale, spec.downsample)
        elif stage == "quantize":
            cur = DepthMap(np.clip(data, d.d_min, d.d_max), d.d_min, d.d_max)
            data = dequantize_depth(quantize_depth(cur, spec.bits)).data
        else:
            if spec.noise_sigma > 0:
                rng = np.random.default_rng(spec.seed & _U64)
                data = data + rng.normal(0.0, spec.noise_sigma, size=data.shape)
    return DepthMap(np.clip(data, d.d_min, d.d_max), d.d_min, d.d_max)


def degrade_batch(maps: list[DepthMap], spec: DegradationSpec, workers: int = 1) -> list[DepthMap]:
    """Degrade each map with seed ``spec.seed ^ index``; independent of ``workers``."""

    def one(i: int) -> DepthMap:
        sub = DegradationSpec(spec.scale, spec.bits, spec.noise_sigma, (spec.seed ^ i) & _U64, spec.downsample, spec.order)
        return degrade(maps[i], sub)

    if workers <= 1:
        return [one(i) for i in range(len(maps))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(len(maps))))
