"""Layers composed from tensor-core ops.  Feature maps are channels-last (B, H, W, C)."""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .tensor import ShapeError, Tensor, concat


class Module:
    """Attribute-walking parameter container."""

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((key, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(key + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{key}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros_param(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Linear(Module):
    """``x @ W + b`` over the last axis."""

    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int):
        self.weight = uniform_fan_in(rng, (d_in, d_out), d_in)
        self.bias = zeros_param((d_out,))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise ShapeError("linear", x.shape, self.weight.shape)
        return x @ self.weight + self.bias


def pad2d(x: Tensor, p: int) -> Tensor:
    """Zero-pad the two spatial axes of a (B, H, W, C) tensor."""
    if p == 0:
        return x
    b, h, w, c = x.shape
    zr = Tensor(np.zeros((b, p, w, c), dtype=x.dtype))
    x = concat([zr, x, zr], axis=1)
    zc = Tensor(np.zeros((b, h + 2 * p, p, c), dtype=x.dtype))
    return concat([zc, x, zc], axis=2)


class Conv2d(Module):
    """k x k convolution as shifted slices + one matmul (im2col)."""

    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, k: int = 3, stride: int = 1):
        self.k, self.stride = k, stride
        self.weight = uniform_fan_in(rng, (k * k * c_in, c_out), k * k * c_in)
        self.bias = zeros_param((c_out,))

    def forward(self, x: Tensor) -> Tensor:
        b, h, w, c = x.shape
        k, s = self.k, self.stride
        if k * k * c != self.weight.shape[0]:
            raise ShapeError("conv2d", x.shape, self.weight.shape)
        if h % s or w % s:
            raise ShapeError("conv2d", x.shape, detail=f"spatial size not divisible by stride {s}")
        if k == 1 and s == 1:
            return x @ self.weight + self.bias
        xp = pad2d(x, k // 2)
        ho, wo = h // s, w // s
        taps = [xp[:, i : i + h : s, j : j + w : s, :] for i in range(k) for j in range(k)]
        cols = concat(taps, axis=-1)
        assert cols.shape[1:3] == (ho, wo)
        return cols @ self.weight + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.eps = eps
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.shift = zeros_param((dim,))

    def forward(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        return xc / (var + self.eps).sqrt() * self.gain + self.shift


@lru_cache(maxsize=64)
def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) half-pixel bilinear interpolation weights, edges clamped."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        x = (i + 0.5) * scale - 0.5
        x = min(max(x, 0.0), n_in - 1)
        lo = int(math.floor(x))
        hi = min(lo + 1, n_in - 1)
        frac = x - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    m.setflags(write=False)
    return m


def upsample_bilinear(x: Tensor, h_out: int, w_out: int) -> Tensor:
    """Separable bilinear resize of a (B, h, w, C) tensor via two matmuls."""
    b, h, w, c = x.shape
    uh = Tensor(bilinear_matrix(h, h_out).astype(x.dtype))
    uw = Tensor(bilinear_matrix(w, w_out).astype(x.dtype))
    rows = uh @ x.reshape(b, h, w * c)  # (B, H, w*C)
    rows = rows.reshape(b, h_out, w, c).transpose(0, 1, 3, 2)  # (B, H, C, w)
    return (rows @ uw.T).transpose(0, 1, 3, 2)  # (B, H, W, C)


def cast_module(module: Module, dtype) -> Module:
    """In-place cast of every parameter to ``dtype``."""
    for p in module.parameters():
        p.data = p.data.astype(dtype)
        p.grad = None
    return module
