import json
import subprocess
import sys

import numpy as np
import pytest

from gdnet.cli import load_run_config, main
from gdnet.depth_io import read_pfm, read_pgm, write_pfm
from gdnet.objectives import read_metrics_csv

TINY = ["--set", "model.image_channels=[4,8]", "--set", "model.depth_channels=8", "--set", "model.gge_channels=8",
        "--set", "model.bridge_channels=4", "--set", "model.fusion_channels=8", "--set", "model.lowrank_dim=4",
        "--set", "model.bins=8", "--set", "train.epochs=2"]


def tree(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_synth_data_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        assert main(["synth-data", "--out", str(tmp_path / name), "--seed", "7", "--count", "10", "--width", "16",
                     "--height", "16"]) == 0
    assert json.loads(capsys.readouterr().out.splitlines()[0]) == {"out": str(tmp_path / "a"), "train": 8, "test": 2}
    a, b = tree(tmp_path / "a"), tree(tmp_path / "b")
    assert a == b and len(a) == 40


def test_usage_errors_exit_2():
    for argv in (["frobnicate"], ["train", "--bogus"], []):
        proc = subprocess.run([sys.executable, "-m", "gdnet.cli", *argv], capture_output=True, text=True)
        assert proc.returncode == 2 and "usage" in proc.stderr


def test_runtime_error_is_structured(tmp_path, capsys):
    assert main(["eval", "--test-dir", str(tmp_path / "missing"), "--baseline", "oracle"]) == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["command"] == "eval" and err["error"] == "FileNotFoundError"


def test_gradcheck_subcommand(capsys):
    assert main(["gradcheck", "--groups", "op,linalg"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["failed"] == 0 and out["checks"] > 250


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"model": {"bins": 16}, "train": {"epochs": 5, "lr_start": 1e-3}}))
    mcfg, tcfg = load_run_config(str(path), ["train.epochs=7", "model.use_lfr=false"])
    assert mcfg.bins == 16 and not mcfg.use_lfr and tcfg.epochs == 7 and tcfg.lr_start == 1e-3
    with pytest.raises(ValueError):
        load_run_config(None, ["epochs=3"])
    path.write_text(json.dumps({"optim": {}}))
    with pytest.raises(ValueError):
        load_run_config(str(path), [])


def test_degrade_subcommand(tmp_path):
    d = np.random.default_rng(0).uniform(0.5, 10, (16, 16)).astype(np.float32)
    write_pfm(tmp_path / "gt.pfm", d)
    assert main(["degrade", str(tmp_path / "gt.pfm"), "--out", str(tmp_path / "x"), "--bits", "6"]) == 0
    assert read_pfm(tmp_path / "x.lq.pfm").shape == (4, 4)
    assert read_pgm(tmp_path / "x.lq.pgm").shape == (4, 4)
    meta = json.loads((tmp_path / "x.meta.json").read_text())
    assert meta["bits"] == 6 and meta["scale"] == 4


def test_train_eval_infer_reproduce(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["synth-data", "--out", str(data), "--count", "5", "--width", "16", "--height", "16"]) == 0
    run = tmp_path / "run"
    assert main(["train", "--train-dir", str(data / "train"), "--test-dir", str(data / "test"), "--out", str(run),
                 "--error-maps", *TINY]) == 0
    capsys.readouterr()
    assert (run / "errors" / "000004.err.pgm").exists()

    assert main(["eval", "--test-dir", str(data / "test"), "--checkpoint", str(run / "model.ckpt"),
                 "--out", str(tmp_path / "ev")]) == 0
    model_row = json.loads(capsys.readouterr().out)
    assert main(["eval", "--test-dir", str(data / "test"), "--baseline", "oracle"]) == 0
    assert json.loads(capsys.readouterr().out)["mae"] == 0.0
    rec = json.loads((run / "run_record.json").read_text())
    assert rec["metrics"]["mae"] == model_row["mae"]

    out = tmp_path / "pred" / "s"
    assert main(["infer", "--checkpoint", str(run / "model.ckpt"), "--sample", str(data / "test" / "000004"),
                 "--out", str(out)]) == 0
    capsys.readouterr()
    assert read_pfm(f"{out}.pred.pfm").shape == (16, 16)
    assert read_pgm(f"{out}.err.pgm", expected_maxval=255).max() == 255
    rows = read_metrics_csv(f"{out}.metrics.csv")
    assert len(rows) == 1 and rows[0]["split"] == "000004"

    assert main(["reproduce", "--record", str(run / "run_record.json"), "--out", str(tmp_path / "again")]) == 0
    assert json.loads(capsys.readouterr().out)["bit_exact"] is True


def test_ablate_subcommand(tmp_path, capsys):
    data = tmp_path / "data"
    main(["synth-data", "--out", str(data), "--count", "4", "--width", "16", "--height", "16"])
    capsys.readouterr()
    assert main(["ablate", "--train-dir", str(data / "train"), "--test-dir", str(data / "test"), "--axes", "lfr",
                 "--seeds", "0,1", "--out", str(tmp_path / "abl"), *TINY, "--set", "train.epochs=1"]) == 0
    lines = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert [(l["variant"], l["seed"]) for l in lines] == [("full", 0), ("full", 1), ("no-lfr", 0), ("no-lfr", 1)]
    assert main(["ablate", "--train-dir", str(data / "train"), "--test-dir", str(data / "test"), "--axes", "bogus",
                 "--out", str(tmp_path / "abl2")]) == 1
