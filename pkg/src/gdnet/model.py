"""Toy-scale geometry-decoupled depth super-resolution network.

Data flow (channels-last tensors)::

    rgb (B,H,W,3) --image encoder--> [F0 (H), F1 (H/2), F2 (H/4)]
                  --DCPM(F1, F2)--> E1 --DCPM(F0, E1)--> F_dg (B,H,W,c0)
    lq  (B,h,w)   --depth encoder--> F_depth (B,h*w,cd)
                  --MLP--> F_lv --QR / projection--> F_lrd = P F_depth
                  --MLP([F_depth, F_lrd])--> F_gg (B,h,w,cg)
    decoder: upsample F_gg, fuse with F_dg, adaptive bins -> depth (B,H,W)
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import linalg
from .nn import Conv2d, LayerNorm, Linear, Module, cast_module, upsample_bilinear, zeros_param
from .tensor import ShapeError, Tensor, concat, gelu


@dataclass(frozen=True)
class ModelConfig:
    image_channels: tuple[int, ...] = (16, 32, 64)
    depth_channels: int = 32
    gge_channels: int = 32
    bridge_channels: int = 32
    fusion_channels: int = 64
    n_sa: int = 1
    n_ca: int = 1
    heads: int = 4
    lowrank_dim: int = 16
    rank_tol: float = linalg.DEFAULT_RANK_TOL
    neumann_terms: int = linalg.DEFAULT_NEUMANN_TERMS
    inverse_mode: str = "exact"  # learned bases are far too ill-conditioned for a short Neumann series
    bins: int = 64
    d_min: float = 0.5
    d_max: float = 10.0
    scale: int = 4  # rgb resolution / depth resolution
    use_fgde: bool = True
    use_dcpm: bool = True
    use_gge: bool = True
    use_lfr: bool = True
    strict_rank: bool = False  # raise on a rank-0 basis instead of projecting to zero

    def __post_init__(self):
        object.__setattr__(self, "image_channels", tuple(int(c) for c in self.image_channels))
        if self.n_sa < 1 or self.n_ca < 1:
            raise ValueError("n_sa and n_ca must be >= 1")
        if self.bins < 2:
            raise ValueError("bins must be >= 2")
        if not 0 < self.d_min < self.d_max:
            raise ValueError("need 0 < d_min < d_max")
        if self.inverse_mode not in ("exact", "neumann"):
            raise ValueError(f"unknown inverse mode {self.inverse_mode!r}")
        for c in self.image_channels:
            if c % self.heads:
                raise ValueError(f"channel width {c} not divisible by {self.heads} heads")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)


class MultiHeadAttention(Module):
    """Scaled dot-product attention with learned Q/K/V/output projections."""

    def __init__(self, rng, q_dim: int, kv_dim: int, heads: int, out_dim: int | None = None):
        if q_dim % heads:
            raise ValueError(f"channel count {q_dim} not divisible by {heads} heads")
        self.heads = heads
        self.model_dim = q_dim
        self.q = Linear(rng, q_dim, q_dim)
        self.k = Linear(rng, kv_dim, q_dim)
        self.v = Linear(rng, kv_dim, q_dim)
        self.o = Linear(rng, q_dim, out_dim or q_dim)
        self.last_weights: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return x.reshape(b, n, self.heads, self.model_dim // self.heads).transpose(0, 2, 1, 3)

    def forward(self, queries: Tensor, keys: Tensor, keep_weights: bool = False) -> Tensor:
        if queries.ndim != 3 or keys.ndim != 3 or queries.shape[0] != keys.shape[0]:
            raise ShapeError("attention", queries.shape, keys.shape, detail="expected (B, N, C) tokens")
        b, nq, _ = queries.shape
        q = self._split(self.q(queries))
        k = self._split(self.k(keys))
        v = self._split(self.v(keys))
        scores = (q @ k.transpose(0, 1, 3, 2)).scale(1.0 / math.sqrt(self.model_dim // self.heads))
        weights = scores.softmax(axis=-1)
        if keep_weights:
            self.last_weights = weights.data
        out = (weights @ v).transpose(0, 2, 1, 3).reshape(b, nq, self.model_dim)
        return self.o(out)


def self_attention(attn: MultiHeadAttention, f_low: Tensor) -> Tensor:
    return attn(f_low, f_low)


def cross_attention(attn: MultiHeadAttention, f_high: Tensor, f_el: Tensor) -> Tensor:
    return attn(f_high, f_el)


def _tokens(x: Tensor) -> Tensor:
    b, h, w, c = x.shape
    return x.reshape(b, h * w, c)


class DCPM(Module):
    """N_SA self-attention blocks on the coarse map, then N_CA cross-attention
    blocks with the fine map as query.  Pre-norm residual blocks."""

    def __init__(self, rng, high_dim: int, low_dim: int, n_sa: int, n_ca: int, heads: int):
        self.sa_norms = [LayerNorm(low_dim) for _ in range(n_sa)]
        self.sa = [MultiHeadAttention(rng, low_dim, low_dim, heads) for _ in range(n_sa)]
        self.ca_qnorms = [LayerNorm(high_dim) for _ in range(n_ca)]
        self.ca_kvnorm = LayerNorm(low_dim)
        self.ca = [MultiHeadAttention(rng, high_dim, low_dim, heads) for _ in range(n_ca)]

    def forward(self, f_high: Tensor, f_low: Tensor) -> Tensor:
        shape = f_high.shape
        low = _tokens(f_low)
        for norm, attn in zip(self.sa_norms, self.sa):
            low = low + self_attention(attn, norm(low))
        el = self.ca_kvnorm(low)
        high = _tokens(f_high)
        for norm, attn in zip(self.ca_qnorms, self.ca):
            high = high + cross_attention(attn, norm(high), el)
        return high.reshape(shape)


class ImageEncoder(Module):
    def __init__(self, rng, channels: tuple[int, ...]):
        self.stages = []
        c_prev = 3
        for s, c in enumerate(channels):
            self.stages.append(Conv2d(rng, c_prev, c, 3, stride=1 if s == 0 else 2))
            self.stages.append(Conv2d(rng, c, c, 3))
            c_prev = c

    def forward(self, rgb: Tensor) -> list[Tensor]:
        b, h, w, _ = rgb.shape
        div = 2 ** (len(self.stages) // 2 - 1)
        if h % div or w % div:
            raise ShapeError("image_encoder", rgb.shape, detail=f"H and W must be divisible by {div}")
        pyramid = []
        x = rgb - 0.5
        for i in range(0, len(self.stages), 2):
            x = self.stages[i + 1](gelu(self.stages[i](x)))
            pyramid.append(x)
            x = gelu(x)
        return pyramid


class FGDE(Module):
    def __init__(self, rng, cfg: ModelConfig):
        self.cfg = cfg
        ch = cfg.image_channels
        self.encoder = ImageEncoder(rng, ch)
        # dcpms[s] fuses scale s (query) with the refined scale s + 1.
        self.dcpms = [DCPM(rng, ch[s], ch[s + 1], cfg.n_sa, cfg.n_ca, cfg.heads) for s in range(len(ch) - 1)]
        self.constant = zeros_param((1, 1, 1, ch[0]))

    def forward(self, rgb: Tensor) -> Tensor:
        b, h, w, _ = rgb.shape
        if not self.cfg.use_fgde:
            return self.constant.broadcast_to((b, h, w, self.cfg.image_channels[0]))
        pyramid = self.encoder(rgb)
        if not self.cfg.use_dcpm:
            return pyramid[0]
        low = pyramid[-1]
        for s in range(len(pyramid) - 2, -1, -1):
            low = self.dcpms[s](pyramid[s], low)
        return low


class GGE(Module):
    def __init__(self, rng, cfg: ModelConfig):
        self.cfg = cfg
        cd, cg = cfg.depth_channels, cfg.gge_channels
        self.enc = [Conv2d(rng, 1, cd), Conv2d(rng, cd, cd), Conv2d(rng, cd, cd)]
        self.lv1 = Linear(rng, cd, cd)
        self.lv2 = Linear(rng, cd, cfg.lowrank_dim)
        self.out1 = Linear(rng, 2 * cd if cfg.use_lfr else cd, cg)
        self.out2 = Linear(rng, cg, cg)
        self.constant = zeros_param((1, 1, 1, cg))
        self.last_ranks: list[int] = []

    def depth_features(self, lq: Tensor) -> Tensor:
        cfg = self.cfg
        x = ((lq - cfg.d_min) / (cfg.d_max - cfg.d_min)).reshape(*lq.shape, 1)
        x = gelu(self.enc[0](x))
        x = gelu(self.enc[1](x))
        return self.enc[2](x)

    def low_rank(self, f_depth: Tensor) -> Tensor:
        """Project each sample's (n, c) features onto its learned rank-<=d basis."""
        cfg = self.cfg
        f_lv = self.lv2(gelu(self.lv1(f_depth)))
        outs, self.last_ranks = [], []
        for i in range(f_depth.shape[0]):
            try:
                op = linalg.build_projection(f_lv[i], cfg.rank_tol, cfg.neumann_terms, cfg.inverse_mode)
            except linalg.RankError:
                if cfg.strict_rank:
                    raise
                self.last_ranks.append(0)
                outs.append(f_depth[i : i + 1] * 0.0)
                continue
            self.last_ranks.append(op.rank)
            outs.append(linalg.project(op, f_depth[i]).reshape(1, *f_depth.shape[1:]))
        return concat(outs, axis=0)

    def forward(self, lq: Tensor) -> Tensor:
        cfg = self.cfg
        b, h, w = lq.shape
        if not cfg.use_gge:
            return self.constant.broadcast_to((b, h, w, cfg.gge_channels))
        n = h * w
        if cfg.use_lfr and cfg.lowrank_dim >= n:
            raise ValueError(f"low-rank dim {cfg.lowrank_dim} must be below the token count {n}")
        f_depth = _tokens(self.depth_features(lq))
        x = concat([f_depth, self.low_rank(f_depth)], axis=-1) if cfg.use_lfr else f_depth
        return self.out2(gelu(self.out1(x))).reshape(b, h, w, cfg.gge_channels)


def bin_centers(widths: Tensor, d_min: float, d_max: float) -> Tensor:
    """Centers of consecutive bins with normalized ``widths`` (B, K) spanning the range."""
    k = widths.shape[-1]
    upper = np.triu(np.ones((k, k), dtype=widths.dtype))
    right_edges = widths @ upper
    return (right_edges - widths.scale(0.5)).scale(d_max - d_min) + d_min


class DepthDecoder(Module):
    def __init__(self, rng, cfg: ModelConfig):
        self.cfg = cfg
        c0, cf = cfg.image_channels[0], cfg.fusion_channels
        self.bridge = Linear(rng, cfg.gge_channels, cfg.bridge_channels)
        self.fuse1 = Linear(rng, c0 + cfg.bridge_channels, cf)
        self.fuse2 = Linear(rng, cf, cf)
        self.logits = Linear(rng, cf, cfg.bins)
        self.width1 = Linear(rng, cf, cf)
        self.width2 = Linear(rng, cf, cfg.bins)
        self.last_probs: np.ndarray | None = None
        self.last_centers: np.ndarray | None = None

    def forward(self, f_dg: Tensor, f_gg: Tensor, keep: bool = False) -> Tensor:
        cfg = self.cfg
        b, h, w, _ = f_dg.shape
        up = upsample_bilinear(f_gg, h, w)
        if up.shape[:3] != f_dg.shape[:3]:
            raise ShapeError("depth_decoder", f_dg.shape, up.shape, detail="grid mismatch after upsampling")
        x = concat([f_dg, self.bridge(up)], axis=-1)
        x = gelu(self.fuse2(gelu(self.fuse1(x))))
        probs = self.logits(x).softmax(axis=-1)  # (B, H, W, K)
        pooled = x.mean(axis=(1, 2))  # (B, cf)
        widths = self.width2(gelu(self.width1(pooled))).softmax(axis=-1)
        centers = bin_centers(widths, cfg.d_min, cfg.d_max)  # (B, K)
        if keep:
            self.last_probs, self.last_centers = probs.data, centers.data
        return (probs * centers.reshape(b, 1, 1, cfg.bins)).sum(axis=-1)


class GDNet(Module):
    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: int | np.random.Generator = 0, dtype=np.float32):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.cfg = cfg
        self.fgde = FGDE(rng, cfg)
        self.gge = GGE(rng, cfg)
        self.decoder = DepthDecoder(rng, cfg)
        cast_module(self, dtype)
        self.dtype = np.dtype(dtype)

    def forward(self, rgb, lq, keep: bool = False) -> Tensor:
        """``rgb`` (B, H, W, 3) in [0, 1] and ``lq`` (B, H/scale, W/scale) in meters."""
        rgb = rgb if isinstance(rgb, Tensor) else Tensor(np.asarray(rgb, dtype=self.dtype))
        lq = lq if isinstance(lq, Tensor) else Tensor(np.asarray(lq, dtype=self.dtype))
        if rgb.ndim != 4 or lq.ndim != 3 or rgb.shape[0] != lq.shape[0]:
            raise ShapeError("gdnet", rgb.shape, lq.shape, detail="expected (B,H,W,3) and (B,h,w)")
        if rgb.shape[1] != lq.shape[1] * self.cfg.scale or rgb.shape[2] != lq.shape[2] * self.cfg.scale:
            raise ShapeError("gdnet", rgb.shape, lq.shape, detail=f"depth must be rgb / {self.cfg.scale}")
        return self.decoder(self.fgde(rgb), self.gge(lq), keep=keep)
