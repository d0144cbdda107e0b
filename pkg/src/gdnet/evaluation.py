"""Evaluation: per-sample metrics, aggregates, error maps and the bicubic baseline."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np

from .depth_io import Sample, load_split, write_pgm
from .model import GDNet
from .objectives import LossConfig, mae, rmse, silog_loss, write_metrics_csv
from .tensor import Tensor, no_grad

Predictor = Callable[[Sample], np.ndarray]
PER_SAMPLE_FIELDS = ("run_id", "sample_id", "mae", "rmse", "silog")


def _keys(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    near = ((a + 2) * t - (a + 3)) * t * t + 1
    far = ((a * t - 5 * a) * t + 8 * a) * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


@lru_cache(maxsize=32)
def bicubic_matrix(n_in: int, n_out: int, a: float = -0.5) -> np.ndarray:
    """(n_out, n_in) Keys cubic weights, half-pixel centers, borders replicated.

    ``a = -0.5`` is the Keys kernel; OpenCV's INTER_CUBIC uses ``a = -0.75``.
    """
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        x = (i + 0.5) * scale - 0.5
        x0 = math.floor(x)
        for tap in range(x0 - 1, x0 + 3):
            m[i, min(max(tap, 0), n_in - 1)] += _keys(np.array(x - tap), a)
    m.setflags(write=False)
    return m


def bicubic_upsample(depth: np.ndarray, h_out: int, w_out: int, a: float = -0.5) -> np.ndarray:
    h, w = depth.shape
    return bicubic_matrix(h, h_out, a) @ depth @ bicubic_matrix(w, w_out, a).T


def bicubic_predictor(sample: Sample) -> np.ndarray:
    """Dequantized low-quality map upsampled bicubically, clipped to the valid range."""
    h, w = sample.gt.data.shape
    up = bicubic_upsample(sample.lq.data, h, w)
    return np.clip(up, sample.lq.d_min, sample.lq.d_max)


def oracle_predictor(sample: Sample) -> np.ndarray:
    return sample.gt.data


def model_predictor(model: GDNet) -> Predictor:
    def predict(sample: Sample) -> np.ndarray:
        cfg = model.cfg
        if (sample.gt.d_min, sample.gt.d_max) != (cfg.d_min, cfg.d_max):
            raise ValueError(f"sample {sample.id}: depth range differs from the checkpoint config")
        h, w = sample.gt.data.shape
        if sample.lq.data.shape != (h // cfg.scale, w // cfg.scale) or h % cfg.scale or w % cfg.scale:
            raise ValueError(f"sample {sample.id}: resolution incompatible with scale {cfg.scale}")
        rgb = (sample.rgb.astype(model.dtype) / model.dtype.type(255.0))[None]
        lq = sample.lq.data.astype(model.dtype)[None]
        with no_grad():
            out = model(Tensor(rgb), Tensor(lq))
        return out.data[0].astype(np.float64)

    return predict


def sample_metrics(pred: np.ndarray, sample: Sample) -> dict:
    gt = sample.gt.data
    return {
        "mae": mae(pred, gt),
        "rmse": rmse(pred, gt),
        "silog": float(silog_loss(np.asarray(pred, np.float64), gt, LossConfig()).item()),
    }


def error_map_levels(errors: list[np.ndarray]) -> list[np.ndarray]:
    """Linear |error| -> [0, 255] with the largest error over all maps at 255."""
    peak = max(float(e.max()) for e in errors)
    if peak == 0:
        return [np.zeros(e.shape, dtype=np.uint8) for e in errors]
    return [np.floor(e / peak * 255.0 + 0.5).astype(np.uint8) for e in errors]


def evaluate(
    test_dir,
    predictor: Predictor,
    out_dir=None,
    run_id: str = "run",
    split: str = "test",
    error_maps: bool = False,
    workers: int = 1,
) -> dict:
    """Per-sample and aggregate metrics; the aggregate is the mean of the per-sample rows.

    With ``out_dir`` writes ``metrics.csv``, ``per_sample.csv`` and (optionally)
    ``errors/{id}.err.pgm``.
    """
    samples = load_split(test_dir)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            preds = list(pool.map(predictor, samples))
    else:
        preds = [predictor(s) for s in samples]
    rows = []
    for s, p in zip(samples, preds):
        if p.shape != s.gt.data.shape:
            raise ValueError(f"prediction for {s.id} has shape {p.shape}, expected {s.gt.data.shape}")
        rows.append({"run_id": run_id, "sample_id": s.id, **sample_metrics(p, s)})
    agg = {"run_id": run_id, "split": split}
    for k in ("mae", "rmse", "silog"):
        agg[k] = float(np.mean([r[k] for r in rows]))
    result = {"aggregate": agg, "per_sample": rows, "predictions": dict(zip((s.id for s in samples), preds))}
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(out_dir / "metrics.csv", [agg])
        write_metrics_csv(out_dir / "per_sample.csv", rows, PER_SAMPLE_FIELDS)
        result["metrics_csv"] = str(out_dir / "metrics.csv")
        if error_maps:
            err_dir = out_dir / "errors"
            err_dir.mkdir(exist_ok=True)
            levels = error_map_levels([np.abs(p - s.gt.data) for s, p in zip(samples, preds)])
            for s, lv in zip(samples, levels):
                write_pgm(err_dir / f"{s.id}.err.pgm", lv, maxval=255)
    return result


def read_per_sample_csv(path) -> list[dict]:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("mae", "rmse", "silog"):
            r[k] = float(r[k])
    return rows
