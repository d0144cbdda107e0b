"""Run records, reproduction and the ablation grid."""

from __future__ import annotations

import csv
import json
import statistics
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .evaluation import evaluate, model_predictor
from .model import ModelConfig
from .training import TrainConfig, train

RECORD_NAME = "run_record.json"


def _jsonable(d: dict) -> dict:
    return json.loads(json.dumps(d))


@dataclass
class RunRecord:
    run_id: str
    config: dict  # {"model": ..., "train": ..., "train_dir": ..., "test_dir": ...}
    epoch_losses: list[float]
    metrics: dict
    wall_time_s: float
    artifacts: dict = field(default_factory=dict)

    def save(self, path) -> None:
        path = Path(path)
        if path.exists():
            raise FileExistsError(f"{path} exists; run records are never overwritten")
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "RunRecord":
        return cls(**json.loads(Path(path).read_text()))

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.config["model"])

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.config["train"])


def run_experiment(
    train_dir,
    test_dir,
    model_cfg: ModelConfig,
    tcfg: TrainConfig,
    out_dir,
    run_id: str | None = None,
    error_maps: bool = False,
    log=None,
) -> RunRecord:
    """Train, evaluate on ``test_dir`` (if given) and write a RunRecord into ``out_dir``."""
    out_dir = Path(out_dir)
    if (out_dir / RECORD_NAME).exists():
        raise FileExistsError(f"{out_dir / RECORD_NAME} exists")
    run_id = run_id or out_dir.name
    start = time.perf_counter()
    result = train(train_dir, model_cfg, tcfg, out_dir, log=log)
    metrics = {"final_train_loss": result["epoch_losses"][-1]}
    artifacts = {"checkpoint": result["checkpoint"], "losses_csv": result["losses_csv"]}
    if test_dir is not None:
        ev = evaluate(test_dir, model_predictor(result["model"]), out_dir, run_id=run_id, error_maps=error_maps)
        metrics.update({k: ev["aggregate"][k] for k in ("mae", "rmse", "silog")})
        artifacts.update(metrics_csv=ev["metrics_csv"], per_sample_csv=str(out_dir / "per_sample.csv"))
    record = RunRecord(
        run_id=run_id,
        config={
            "model": asdict(model_cfg),
            "train": asdict(tcfg),
            "train_dir": str(Path(train_dir).resolve()),
            "test_dir": None if test_dir is None else str(Path(test_dir).resolve()),
        },
        epoch_losses=result["epoch_losses"],
        metrics=metrics,
        wall_time_s=time.perf_counter() - start,
        artifacts=artifacts,
    )
    record.save(out_dir / RECORD_NAME)
    return record


def reproduce(record_path, out_dir, log=None) -> tuple[RunRecord, bool]:
    """Re-run a record's config into ``out_dir``; True when every metric matches bit-exactly."""
    old = RunRecord.load(record_path)
    new = run_experiment(
        old.config["train_dir"], old.config["test_dir"], old.model_config, old.train_config, out_dir,
        run_id=old.run_id, log=log,
    )
    same = new.metrics == old.metrics and new.epoch_losses == old.epoch_losses
    return new, same


# (name, ModelConfig overrides, TrainConfig overrides) per axis value.
ABLATION_AXES: dict[str, list[tuple[str, dict, dict]]] = {
    "fgde": [("no-fgde", {"use_fgde": False}, {})],
    "dcpm": [("no-dcpm", {"use_dcpm": False}, {})],
    "gge": [("no-gge", {"use_gge": False}, {})],
    "lfr": [("no-lfr", {"use_lfr": False}, {})],
    "loss": [("loss-l1", {}, {"loss": "l1"}), ("loss-mse", {}, {"loss": "mse"})],
    "n_sa_ca": [
        (f"sa{a}-ca{c}", {"n_sa": a, "n_ca": c}, {})
        for a, c in ((2, 1), (3, 1), (1, 2), (1, 3))
    ],
}
ABLATION_FIELDS = ("variant", "seed", "use_fgde", "use_dcpm", "use_gge", "use_lfr", "loss", "n_sa", "n_ca", "mae", "rmse", "silog")


def ablation_variants(axes) -> list[tuple[str, dict, dict]]:
    unknown = set(axes) - set(ABLATION_AXES)
    if unknown:
        raise ValueError(f"unknown ablation axes {sorted(unknown)}; expected a subset of {sorted(ABLATION_AXES)}")
    variants = [("full", {}, {})]
    for axis in ABLATION_AXES:  # fixed order regardless of how axes were given
        if axis in axes:
            variants.extend(ABLATION_AXES[axis])
    return variants


def ablate(
    train_dir,
    test_dir,
    axes,
    out_dir,
    model_cfg: ModelConfig = ModelConfig(),
    tcfg: TrainConfig = TrainConfig(),
    seeds=(0,),
    log=None,
) -> list[dict]:
    """Train and evaluate every variant for every seed; write ``ablation.csv``.

    Existing run directories with a record are reused, so an interrupted sweep resumes.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, model_kw, train_kw in ablation_variants(axes):
        for seed in seeds:
            mcfg = replace(model_cfg, **model_kw)
            t = replace(tcfg, seed=seed, **train_kw)
            run_dir = out_dir / f"{name}-seed{seed}"
            if (run_dir / RECORD_NAME).exists():
                rec = RunRecord.load(run_dir / RECORD_NAME)
                if rec.config["model"] != _jsonable(asdict(mcfg)) or rec.config["train"] != _jsonable(asdict(t)):
                    raise ValueError(f"{run_dir} holds a different configuration")
            else:
                if log:
                    log(f"ablation: {name} seed {seed}")
                rec = run_experiment(train_dir, test_dir, mcfg, t, run_dir, log=log)
            rows.append({
                "variant": name, "seed": seed,
                "use_fgde": mcfg.use_fgde, "use_dcpm": mcfg.use_dcpm, "use_gge": mcfg.use_gge, "use_lfr": mcfg.use_lfr,
                "loss": t.loss, "n_sa": mcfg.n_sa, "n_ca": mcfg.n_ca,
                "mae": rec.metrics["mae"], "rmse": rec.metrics["rmse"], "silog": rec.metrics["silog"],
                "record": str(run_dir / RECORD_NAME),
            })
    with open(out_dir / "ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(ABLATION_FIELDS), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return rows


def median_by_variant(rows: list[dict], metric: str = "mae") -> dict[str, float]:
    groups: dict[str, list[float]] = {}
    for r in rows:
        groups.setdefault(r["variant"], []).append(float(r[metric]))
    return {k: statistics.median(v) for k, v in groups.items()}
