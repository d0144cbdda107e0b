"""Deterministic training loop."""

from __future__ import annotations

import csv
import zlib
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import checkpoint
from .depth_io import Sample, load_split
from .model import GDNet, ModelConfig
from .objectives import LossConfig, get_loss
from .optim import Adam, linear_lr
from .tensor import Tensor

_U64 = (1 << 64) - 1


def derive_rng(seed: int, tag: str, *index: int) -> np.random.Generator:
    """Independent stream for (seed, purpose tag, index...)."""
    return np.random.default_rng(np.random.SeedSequence([seed & _U64, zlib.crc32(tag.encode()), *index]))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 2
    lr_start: float = 2e-4
    lr_end: float = 5e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    crop: int | None = None  # square crop side in RGB pixels; None keeps the full frame
    hflip: bool = True
    vflip: bool = True
    loss: str = "silog"
    lam: float = 0.85
    alpha: float = 10.0
    dtype: str = "float32"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 < self.lr_end <= self.lr_start:
            raise ValueError("need 0 < lr_end <= lr_start")
        if self.crop is not None and self.crop < 1:
            raise ValueError("crop must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys {sorted(unknown)}")
        return cls(**d)

    def lr(self, epoch: int) -> float:
        return linear_lr(epoch, self.epochs, self.lr_start, self.lr_end)


def stack_samples(samples: list[Sample], cfg: ModelConfig, dtype=np.float32):
    """(rgb in [0,1] (N,H,W,3), lq (N,h,w), gt (N,H,W)) after compatibility checks."""
    if not samples:
        raise ValueError("empty dataset")
    for s in samples:
        h, w = s.gt.data.shape
        lh, lw = s.lq.data.shape
        if h != lh * cfg.scale or w != lw * cfg.scale:
            raise ValueError(f"sample {s.id}: depth {lh}x{lw} is not rgb {h}x{w} / scale {cfg.scale}")
        if (s.gt.d_min, s.gt.d_max) != (cfg.d_min, cfg.d_max):
            raise ValueError(f"sample {s.id}: depth range {s.gt.depth_range} differs from model {cfg.d_min, cfg.d_max}")
    shapes = {s.gt.data.shape for s in samples}
    if len(shapes) != 1:
        raise ValueError(f"mixed resolutions in dataset: {sorted(shapes)}")
    rgb = np.stack([s.rgb for s in samples]).astype(dtype) / np.dtype(dtype).type(255.0)
    lq = np.stack([s.lq.data for s in samples]).astype(dtype)
    gt = np.stack([s.gt.data for s in samples]).astype(dtype)
    return rgb, lq, gt


def _batch(rgb, lq, gt, idx, rng, tcfg: TrainConfig, scale: int):
    H, W = gt.shape[1:]
    c = tcfg.crop or min(H, W)
    if c > min(H, W) or c % scale:
        raise ValueError(f"crop {c} must be a multiple of {scale} and fit in {H}x{W}")
    cl = c // scale
    rb, lb, gb = [], [], []
    for i in idx:
        y = int(rng.integers(0, (H - c) // scale + 1))
        x = int(rng.integers(0, (W - c) // scale + 1))
        r = rgb[i, y * scale : y * scale + c, x * scale : x * scale + c]
        g = gt[i, y * scale : y * scale + c, x * scale : x * scale + c]
        q = lq[i, y : y + cl, x : x + cl]
        flip_h, flip_v = rng.random(2) < 0.5
        if tcfg.hflip and flip_h:
            r, g, q = r[:, ::-1], g[:, ::-1], q[:, ::-1]
        if tcfg.vflip and flip_v:
            r, g, q = r[::-1], g[::-1], q[::-1]
        rb.append(r)
        gb.append(g)
        lb.append(q)
    return np.ascontiguousarray(rb), np.ascontiguousarray(lb), np.ascontiguousarray(gb)


def train(train_dir, model_cfg: ModelConfig, tcfg: TrainConfig, out_dir, log=None) -> dict:
    """Train on ``train_dir`` and write ``model.ckpt`` and ``losses.csv`` to ``out_dir``.

    Returns a dict with the per-epoch mean losses and artifact paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dtype = np.dtype(tcfg.dtype)
    rgb, lq, gt = stack_samples(load_split(train_dir), model_cfg, dtype)
    model = GDNet(model_cfg, seed=derive_rng(tcfg.seed, "init"), dtype=dtype)
    opt = Adam(model.parameters(), tcfg.lr_start, (tcfg.beta1, tcfg.beta2), tcfg.eps)
    loss_fn = get_loss(tcfg.loss, LossConfig(tcfg.lam, tcfg.alpha))
    n = len(gt)
    epoch_losses, lrs = [], []
    for epoch in range(tcfg.epochs):
        opt.lr = tcfg.lr(epoch)
        order = derive_rng(tcfg.seed, "order", epoch).permutation(n)
        aug = derive_rng(tcfg.seed, "augment", epoch)
        total = 0.0
        for start in range(0, n, tcfg.batch_size):
            idx = order[start : start + tcfg.batch_size]
            r, q, g = _batch(rgb, lq, gt, idx, aug, tcfg, model_cfg.scale)
            opt.zero_grad()
            loss = loss_fn(model(Tensor(r), Tensor(q)), Tensor(g))
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        epoch_losses.append(total / n)
        lrs.append(opt.lr)
        if log:
            log(f"epoch {epoch + 1}/{tcfg.epochs} lr={opt.lr:.3g} loss={epoch_losses[-1]:.5f}")
    ckpt = out_dir / "model.ckpt"
    checkpoint.save_checkpoint(ckpt, {"model": asdict(model_cfg)}, checkpoint.state_dict(model))
    loss_csv = out_dir / "losses.csv"
    with open(loss_csv, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "lr", "mean_loss"])
        for e, (lr, l) in enumerate(zip(lrs, epoch_losses)):
            w.writerow([e, repr(lr), repr(l)])
    return {"epoch_losses": epoch_losses, "checkpoint": str(ckpt), "losses_csv": str(loss_csv), "model": model}


def load_model(path) -> GDNet:
    config, tensors = checkpoint.load_checkpoint(path)
    cfg = ModelConfig.from_dict(config["model"])
    model = GDNet(cfg)
    checkpoint.load_state_dict(model, tensors)
    return model
