import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gdnet.gradcheck import gradcheck
from gdnet.objectives import (
    LossConfig, get_loss, l1_loss, mae, mse_loss, read_metrics_csv, rmse, silog_loss, write_metrics_csv,
)
from gdnet.tensor import DomainError, ShapeError, Tensor


def depth(rng, shape=(8, 8)):
    return rng.uniform(0.5, 10.0, shape)


def test_silog_closed_forms():
    gt = depth(np.random.default_rng(0))
    assert abs(silog_loss(gt, gt).item()) <= 1e-9
    want = 10 * math.log(2) * math.sqrt(1 - 0.85)
    assert abs(silog_loss(2 * gt, gt).item() - want) <= 1e-3
    assert abs(want - 2.68455) < 1e-5
    for c in (0.1, 3.0, 17.0):
        assert abs(silog_loss(c * gt, gt, LossConfig(lam=1.0)).item()) <= 1e-9


def test_silog_matches_literal_formula():
    rng = np.random.default_rng(1)
    p, g = depth(rng), depth(rng)
    G = np.log(p) - np.log(g)
    n = G.size
    literal = 10 * math.sqrt(np.mean(G**2) - 0.85 / n**2 * G.sum() ** 2)
    assert silog_loss(p, g).item() == pytest.approx(literal, rel=1e-12)


def test_silog_batch_is_mean_of_images():
    rng = np.random.default_rng(2)
    p, g = depth(rng, (3, 6, 6)), depth(rng, (3, 6, 6))
    each = [silog_loss(p[i], g[i]).item() for i in range(3)]
    assert silog_loss(p, g).item() == pytest.approx(np.mean(each), rel=1e-12)


def test_silog_errors():
    with pytest.raises(DomainError):
        silog_loss(np.zeros((2, 2)), np.ones((2, 2)))
    with pytest.raises(DomainError):
        silog_loss(np.ones((2, 2)), -np.ones((2, 2)))
    with pytest.raises(ShapeError):
        silog_loss(np.ones((2, 2)), np.ones((2, 3)))
    with pytest.raises(ValueError):
        LossConfig(lam=1.5)
    with pytest.raises(ValueError):
        LossConfig(alpha=0.0)
    with pytest.raises(ValueError):
        get_loss("huber")


def test_silog_gradcheck_and_finite_at_optimum():
    rng = np.random.default_rng(3)
    g = depth(rng, (2, 4, 4))
    report = gradcheck(lambda p: silog_loss(p, Tensor(g)), depth(rng, (2, 4, 4)))
    assert report.passed and report.max_rel_error < 1e-4
    p = Tensor(g.copy(), requires_grad=True)
    silog_loss(p, Tensor(g)).backward()
    assert np.all(np.isfinite(p.grad))


def test_l1_mse_losses():
    rng = np.random.default_rng(4)
    p, g = depth(rng), depth(rng)
    assert l1_loss(p, g).item() == pytest.approx(np.abs(p - g).mean())
    assert mse_loss(p, g).item() == pytest.approx(((p - g) ** 2).mean())
    assert gradcheck(lambda t: mse_loss(t, Tensor(g)), p).passed
    assert gradcheck(lambda t: l1_loss(t, Tensor(g)), p).passed


def test_metric_examples():
    gt = np.array([1.0, 2.0, 3.0])
    assert mae(gt, gt) == 0 and rmse(gt, gt) == 0
    pred = np.array([2.0, 2.0, 2.0])
    assert mae(pred, gt) == pytest.approx(2 / 3)
    assert rmse(pred, gt) == pytest.approx(math.sqrt(2 / 3))
    with pytest.raises(ShapeError):
        mae(np.ones(3), np.ones(4))
    assert mae(pred, gt, mask=np.array([True, True, False])) == pytest.approx(0.5)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 1.0))
def test_silog_nonnegative_and_scale_invariant(seed, lam):
    rng = np.random.default_rng(seed)
    p, g = depth(rng, (5, 5)), depth(rng, (5, 5))
    assert silog_loss(p, g, LossConfig(lam=lam)).item() >= 0
    c = float(rng.uniform(0.1, 10))
    a = silog_loss(p, g, LossConfig(lam=1.0)).item()
    b = silog_loss(c * p, g, LossConfig(lam=1.0)).item()
    assert abs(a - b) <= 1e-9 * max(1.0, a)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_metrics_symmetric_and_jensen(seed):
    rng = np.random.default_rng(seed)
    p, g = depth(rng, (4, 7)), depth(rng, (4, 7))
    assert mae(p, g) == mae(g, p) and rmse(p, g) == rmse(g, p)
    assert rmse(p, g) >= mae(p, g) - 1e-15


def test_metrics_csv_round_trip(tmp_path):
    rows = [{"run_id": "a", "split": "test", "mae": 0.1, "rmse": 0.2, "silog": 1.0 / 3.0}]
    path = tmp_path / "m.csv"
    write_metrics_csv(path, rows)
    assert path.read_text().splitlines()[0] == "run_id,split,mae,rmse,silog"
    assert read_metrics_csv(path) == rows
