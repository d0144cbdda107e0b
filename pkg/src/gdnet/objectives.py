"""Training losses (SILog, L1, MSE) and evaluation metrics (MAE, RMSE)."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import DomainError, ShapeError, Tensor, log, relu

RADICAND_EPS = 1e-12


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.85
    alpha: float = 10.0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lam}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


def _pair(pred, gt, op: str) -> tuple[Tensor, Tensor]:
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    gt = gt if isinstance(gt, Tensor) else Tensor(np.asarray(gt, dtype=pred.dtype))
    if pred.shape != gt.shape:
        raise ShapeError(op, pred.shape, gt.shape)
    return pred, gt


def silog_loss(pred, gt, cfg: LossConfig = LossConfig()) -> Tensor:
    """Scale-invariant log loss over the last two (pixel) axes.

    With ``g = log(pred) - log(gt)`` per image,
    ``loss = alpha * sqrt(mean(g^2) - lam * mean(g)^2)``, evaluated as
    ``alpha * sqrt(var(g) + (1 - lam) * mean(g)^2)`` (same value, no
    cancellation).  The radicand is clamped at zero; 1e-12 floors it inside
    the derivative.  Leading axes are a batch and are averaged.
    """
    pred, gt = _pair(pred, gt, "silog_loss")
    if pred.ndim < 2:
        raise ShapeError("silog_loss", pred.shape, detail="need at least (H, W)")
    if np.any(pred.data <= 0) or np.any(gt.data <= 0):
        raise DomainError("silog_loss", "depths must be strictly positive")
    g = log(pred) - log(gt)
    axes = (-2, -1)
    mu = g.mean(axis=axes, keepdims=True)
    centered = g - mu
    var = (centered * centered).mean(axis=axes)
    mu2 = (mu * mu).reshape(var.shape)
    radicand = relu(var + mu2 * (1.0 - cfg.lam))
    per_image = radicand.sqrt(grad_eps=RADICAND_EPS) * cfg.alpha
    return per_image.mean()


def l1_loss(pred, gt) -> Tensor:
    pred, gt = _pair(pred, gt, "l1_loss")
    return (pred - gt).abs().mean()


def mse_loss(pred, gt) -> Tensor:
    pred, gt = _pair(pred, gt, "mse_loss")
    diff = pred - gt
    return (diff * diff).mean()


LOSSES = {"silog": silog_loss, "l1": l1_loss, "mse": mse_loss}


def get_loss(name: str, cfg: LossConfig = LossConfig()):
    if name == "silog":
        return lambda p, g: silog_loss(p, g, cfg)
    if name in LOSSES:
        return LOSSES[name]
    raise ValueError(f"unknown loss {name!r}; expected one of {sorted(LOSSES)}")


def _arrays(pred, gt, mask):
    pred = np.asarray(pred.data if isinstance(pred, Tensor) else pred, dtype=np.float64)
    gt = np.asarray(gt.data if isinstance(gt, Tensor) else gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError("metric", pred.shape, gt.shape)
    diff = pred - gt
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != diff.shape:
            raise ShapeError("metric mask", mask.shape, diff.shape)
        diff = diff[mask]
    return diff


def mae(pred, gt, mask=None) -> float:
    return float(np.mean(np.abs(_arrays(pred, gt, mask))))


def rmse(pred, gt, mask=None) -> float:
    diff = _arrays(pred, gt, mask)
    return float(np.sqrt(np.mean(diff * diff)))


METRIC_FIELDS = ("run_id", "split", "mae", "rmse", "silog")


def write_metrics_csv(path, rows: list[dict], fields=METRIC_FIELDS) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(float(row[k])) if isinstance(row[k], float) else row[k]) for k in fields})


def read_metrics_csv(path) -> list[dict]:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for k in ("mae", "rmse", "silog"):
            if k in row:
                row[k] = float(row[k])
    return rows
