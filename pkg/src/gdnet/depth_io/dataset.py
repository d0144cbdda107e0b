"""Dataset directories: ``{split}/{id}.rgb.ppm, {id}.gt.pfm, {id}.lq.pgm, {id}.meta.json``.

The low-quality map is stored on a 16-bit grid over ``[d_min, d_max]``
regardless of the degradation bit depth (which is recorded in the sidecar),
because additive noise moves values off the degradation grid.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .degrade import DegradationSpec, degrade, dequantize_depth, quantize_depth, QuantizedDepth
from .depthmap import DepthMap
from .formats import read_meta, read_pfm, read_pgm, read_ppm, write_meta, write_pfm, write_pgm, write_ppm
from .scenes import SceneSpec, generate_scene

CONTAINER_BITS = 16
_U64 = (1 << 64) - 1


@dataclass
class Sample:
    id: str
    rgb: np.ndarray  # (H, W, 3) uint8
    gt: DepthMap
    lq: DepthMap
    meta: dict


def scene_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed & _U64, 0x5CE4E, index]).generate_state(1, np.uint64)[0])


def write_sample(split_dir: Path, sid: str, rgb: np.ndarray, gt: DepthMap, lq: DepthMap, meta: dict) -> None:
    split_dir.mkdir(parents=True, exist_ok=True)
    write_ppm(split_dir / f"{sid}.rgb.ppm", rgb)
    write_pfm(split_dir / f"{sid}.gt.pfm", gt.data.astype(np.float32))
    write_pgm(split_dir / f"{sid}.lq.pgm", quantize_depth(lq, CONTAINER_BITS).levels, maxval=65535)
    write_meta(split_dir / f"{sid}.meta.json", meta)


def synthesize(
    root,
    n_train: int,
    n_test: int,
    seed: int = 0,
    scene: SceneSpec | None = None,
    degradation: DegradationSpec | None = None,
) -> Path:
    """Render, degrade and write ``n_train + n_test`` samples under ``root``.

    Sample ``i`` (numbered across both splits) uses scene seed
    ``scene_seed(seed, i)`` and degradation seed ``degradation.seed ^ i``.
    """
    root = Path(root)
    scene = scene or SceneSpec()
    degradation = degradation or DegradationSpec.relative(scene.d_min, scene.d_max, seed=seed)
    for index in range(n_train + n_test):
        split = "train" if index < n_train else "test"
        gt, rgb = generate_scene(replace(scene, seed=scene_seed(seed, index)))
        # Stored ground truth is float32; degrade what will be read back.
        gt = DepthMap(gt.data.astype(np.float32).astype(np.float64), gt.d_min, gt.d_max)
        spec = replace(degradation, seed=(degradation.seed ^ index) & _U64)
        lq = degrade(gt, spec)
        write_sample(root / split, f"{index:06d}", rgb, gt, lq, spec.sidecar(gt.d_min, gt.d_max))
    return root


def sample_ids(split_dir) -> list[str]:
    return sorted(p.name[: -len(".meta.json")] for p in Path(split_dir).glob("*.meta.json"))


def load_sample(split_dir, sid: str) -> Sample:
    split_dir = Path(split_dir)
    meta = read_meta(split_dir / f"{sid}.meta.json")
    d_min, d_max = float(meta["d_min"]), float(meta["d_max"])
    gt = DepthMap(read_pfm(split_dir / f"{sid}.gt.pfm").astype(np.float64), d_min, d_max)
    levels = read_pgm(split_dir / f"{sid}.lq.pgm", expected_maxval=65535)
    lq = dequantize_depth(QuantizedDepth(levels, d_min, d_max, CONTAINER_BITS))
    rgb = read_ppm(split_dir / f"{sid}.rgb.ppm")
    if gt.data.shape != rgb.shape[:2]:
        raise ValueError(f"{sid}: rgb {rgb.shape[:2]} and depth {gt.data.shape} differ")
    return Sample(sid, rgb, gt, lq, meta)


def load_split(split_dir) -> list[Sample]:
    ids = sample_ids(split_dir)
    if not ids:
        raise FileNotFoundError(f"no samples in {split_dir}")
    return [load_sample(split_dir, sid) for sid in ids]
