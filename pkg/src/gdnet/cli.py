"""Command-line interface: ``gdnet <subcommand> ...``.

Run configuration is a JSON file ``{"model": {...}, "train": {...}}`` whose
keys are ModelConfig / TrainConfig fields; ``--set section.key=value``
overrides single entries (values parsed as JSON, falling back to strings).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import depth_io
from .depth_io import DegradationSpec, DepthMap, SceneSpec
from .evaluation import bicubic_predictor, evaluate, model_predictor, oracle_predictor, sample_metrics
from .experiments import ablate, reproduce, run_experiment
from .model import ModelConfig
from .objectives import write_metrics_csv
from .training import TrainConfig, load_model

SECTIONS = ("model", "train")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_run_config(path: str | None, overrides: list[str]) -> tuple[ModelConfig, TrainConfig]:
    cfg: dict = {s: {} for s in SECTIONS}
    if path:
        raw = json.loads(Path(path).read_text())
        unknown = set(raw) - set(SECTIONS)
        if unknown:
            raise ValueError(f"unknown config sections {sorted(unknown)}")
        for s in SECTIONS:
            cfg[s].update(raw.get(s, {}))
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or section not in SECTIONS:
            raise ValueError(f"--set expects section.key=value with section in {SECTIONS}, got {item!r}")
        cfg[section][name] = _parse_value(value)
    return ModelConfig.from_dict(cfg["model"]), TrainConfig.from_dict(cfg["train"])


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def cmd_synth_data(args) -> int:
    scene = SceneSpec(width=args.width, height=args.height, d_min=args.d_min, d_max=args.d_max)
    sigma = args.noise_sigma if args.noise_sigma is not None else args.noise_frac * (args.d_max - args.d_min)
    deg = DegradationSpec(scale=args.scale, bits=args.bits, noise_sigma=sigma, seed=args.seed)
    n_test = int(round(args.count * args.test_fraction))
    depth_io.synthesize(args.out, args.count - n_test, n_test, seed=args.seed, scene=scene, degradation=deg)
    print(json.dumps({"out": str(args.out), "train": args.count - n_test, "test": n_test}))
    return 0


def cmd_degrade(args) -> int:
    data = depth_io.read_pfm(args.input).astype(np.float64)
    gt = DepthMap(np.clip(data, args.d_min, args.d_max), args.d_min, args.d_max)
    spec = DegradationSpec(scale=args.scale, bits=args.bits, noise_sigma=args.noise_sigma, seed=args.seed)
    lq = depth_io.degrade(gt, spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    depth_io.write_pgm(f"{out}.lq.pgm", depth_io.quantize_depth(lq, 16).levels)
    depth_io.write_pfm(f"{out}.lq.pfm", lq.data.astype(np.float32))
    depth_io.write_meta(f"{out}.meta.json", spec.sidecar(args.d_min, args.d_max))
    return 0


def cmd_train(args) -> int:
    mcfg, tcfg = load_run_config(args.config, args.set)
    rec = run_experiment(args.train_dir, args.test_dir, mcfg, tcfg, args.out, error_maps=args.error_maps,
                         log=_log if args.verbose else None)
    print(json.dumps({"run_id": rec.run_id, "metrics": rec.metrics, "wall_time_s": rec.wall_time_s}))
    return 0


def cmd_eval(args) -> int:
    if args.baseline:
        predictor = {"bicubic": bicubic_predictor, "oracle": oracle_predictor}[args.baseline]
        run_id = args.run_id or args.baseline
    else:
        if not args.checkpoint:
            raise ValueError("eval needs --checkpoint or --baseline")
        predictor = model_predictor(load_model(args.checkpoint))
        run_id = args.run_id or Path(args.checkpoint).parent.name
    res = evaluate(args.test_dir, predictor, args.out, run_id=run_id, error_maps=args.error_maps, workers=args.workers)
    print(json.dumps(res["aggregate"]))
    return 0


def cmd_infer(args) -> int:
    prefix = Path(args.sample)
    sample = depth_io.load_sample(prefix.parent, prefix.name)
    pred = model_predictor(load_model(args.checkpoint))(sample)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    depth_io.write_pfm(f"{out}.pred.pfm", pred.astype(np.float32))
    err = np.abs(pred - sample.gt.data)
    peak = float(err.max())
    levels = np.zeros(err.shape, np.uint8) if peak == 0 else np.floor(err / peak * 255 + 0.5).astype(np.uint8)
    depth_io.write_pgm(f"{out}.err.pgm", levels, maxval=255)
    row = {"run_id": args.run_id, "split": sample.id, **sample_metrics(pred, sample)}
    write_metrics_csv(f"{out}.metrics.csv", [row])
    print(json.dumps(row))
    return 0


def cmd_ablate(args) -> int:
    mcfg, tcfg = load_run_config(args.config, args.set)
    seeds = [int(s) for s in args.seeds.split(",")]
    axes = [a for a in args.axes.split(",") if a]
    rows = ablate(args.train_dir, args.test_dir, axes, args.out, mcfg, tcfg, seeds, log=_log if args.verbose else None)
    for r in rows:
        print(json.dumps({k: r[k] for k in ("variant", "seed", "mae", "rmse")}))
    return 0


def cmd_gradcheck(args) -> int:
    from .verify import run_suite

    start = time.perf_counter()
    results = run_suite(groups=tuple(args.groups.split(",")), log=_log if args.verbose else None)
    failed = [r for r in results if not r.passed]
    for r in failed:
        print(f"FAIL {r.group}/{r.name}: {r.report}", file=sys.stderr)
    worst = max(r.report.max_rel_error for r in results)
    print(json.dumps({"checks": len(results), "failed": len(failed), "max_rel_error": worst,
                      "seconds": time.perf_counter() - start}))
    return 0 if not failed else 1


def cmd_reproduce(args) -> int:
    rec, same = reproduce(args.record, args.out, log=_log if args.verbose else None)
    print(json.dumps({"run_id": rec.run_id, "bit_exact": same, "metrics": rec.metrics}))
    return 0 if same else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gdnet", description="Toy guided depth super-resolution toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-data", help="render a synthetic dataset")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--count", type=int, default=250, help="total samples (train + test)")
    s.add_argument("--test-fraction", type=float, default=0.2)
    s.add_argument("--width", type=int, default=64)
    s.add_argument("--height", type=int, default=64)
    s.add_argument("--d-min", type=float, default=0.5)
    s.add_argument("--d-max", type=float, default=10.0)
    s.add_argument("--scale", type=int, default=4)
    s.add_argument("--bits", type=int, default=6)
    s.add_argument("--noise-frac", type=float, default=0.02, help="noise sigma as a fraction of the range")
    s.add_argument("--noise-sigma", type=float, default=None, help="noise sigma in meters (overrides --noise-frac)")
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("degrade", help="degrade one ground-truth PFM")
    s.add_argument("input", type=Path)
    s.add_argument("--out", required=True, help="output prefix")
    s.add_argument("--d-min", type=float, default=0.5)
    s.add_argument("--d-max", type=float, default=10.0)
    s.add_argument("--scale", type=int, default=4)
    s.add_argument("--bits", type=int, default=8)
    s.add_argument("--noise-sigma", type=float, default=0.095)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_degrade)

    def run_config(s):
        s.add_argument("--config", help="JSON file with model/train sections")
        s.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
        s.add_argument("-v", "--verbose", action="store_true")

    s = sub.add_parser("train", help="train, optionally evaluate, and write a run record")
    s.add_argument("--train-dir", required=True)
    s.add_argument("--test-dir")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--error-maps", action="store_true")
    run_config(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint or a baseline")
    s.add_argument("--test-dir", required=True)
    s.add_argument("--checkpoint")
    s.add_argument("--baseline", choices=("bicubic", "oracle"))
    s.add_argument("--out", type=Path)
    s.add_argument("--run-id")
    s.add_argument("--error-maps", action="store_true")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("infer", help="predict one sample; writes .pred.pfm, .err.pgm, .metrics.csv")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--sample", required=True, help="sample prefix, e.g. data/test/000200")
    s.add_argument("--out", required=True, help="output prefix")
    s.add_argument("--run-id", default="infer")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("ablate", help="train and evaluate ablation variants")
    s.add_argument("--train-dir", required=True)
    s.add_argument("--test-dir", required=True)
    s.add_argument("--axes", required=True, help="comma list of fgde,dcpm,gge,lfr,loss,n_sa_ca")
    s.add_argument("--seeds", default="0")
    s.add_argument("--out", required=True, type=Path)
    run_config(s)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("gradcheck", help="run the finite-difference verification suite")
    s.add_argument("--groups", default="op,linalg,block,loss")
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("reproduce", help="re-run a run record and compare metrics bit-exactly")
    s.add_argument("--record", required=True)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # structured diagnostics instead of a traceback
        print(json.dumps({"command": args.command, "error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
