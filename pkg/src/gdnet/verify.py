"""Verification suite: finite-difference gradchecks of every op and model block.

Each check builds a scalar from the op output through a fixed random
weighting (so every output coordinate contributes) and compares autodiff
against central differences in float64.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import linalg, nn
from . import tensor as T
from .gradcheck import GradcheckReport, directional_gradcheck, gradcheck
from .model import DCPM, FGDE, GGE, DepthDecoder, GDNet, ImageEncoder, ModelConfig, MultiHeadAttention
from .objectives import l1_loss, mse_loss, silog_loss
from .tensor import Tensor

CASES_PER_OP = 10


@dataclass
class CheckResult:
    group: str
    name: str
    report: GradcheckReport
    seconds: float

    @property
    def passed(self) -> bool:
        return self.report.passed


def _weighted(out: Tensor, seed: int) -> Tensor:
    w = np.random.default_rng(seed + 7919).standard_normal(out.shape)
    return (out * w).sum()


def _shape(rng, ndim_range=(1, 3), size_range=(1, 4)) -> tuple[int, ...]:
    return tuple(int(s) for s in rng.integers(size_range[0], size_range[1] + 1, rng.integers(*ndim_range, endpoint=True)))


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.standard_normal(shape)
    return np.where(x >= 0, x + margin, x - margin)


# Each factory takes a seeded rng and returns (f, inputs).
def _binary(op):
    def make(rng):
        s = _shape(rng)
        # the second operand broadcasts against the first
        s2 = tuple(1 if rng.random() < 0.3 else n for n in s[int(rng.integers(0, len(s))):])
        return (lambda a, b: op(a, b)), [rng.standard_normal(s), _away_from_zero(rng, s2, 0.5)]
    return make


def _unary(op, positive=False, margin=0.0):
    def make(rng):
        s = _shape(rng)
        x = rng.uniform(0.2, 3.0, s) if positive else _away_from_zero(rng, s, margin)
        return op, [x]
    return make


def _matmul(rng):
    batch = _shape(rng, (0, 2), (1, 3))
    m, k, n = (int(v) for v in rng.integers(1, 5, 3))
    b_batch = batch[int(rng.integers(0, len(batch) + 1)):]
    return T.matmul, [rng.standard_normal(batch + (m, k)), rng.standard_normal(b_batch + (k, n))]


def _reduce(name):
    def make(rng):
        s = _shape(rng)
        axis = None if rng.random() < 0.3 else int(rng.integers(-len(s), len(s)))
        if name == "max":
            x = rng.permutation(np.arange(int(np.prod(s)), dtype=np.float64)).reshape(s) * 0.1
            return (lambda a: a.max(axis=axis)), [x]
        keep = bool(rng.random() < 0.5)
        return (lambda a: getattr(a, name)(axis=axis, keepdims=keep)), [rng.standard_normal(s)]
    return make


def _reshape(rng):
    s = _shape(rng)
    return (lambda a: a.reshape(-1, s[-1]).reshape(*reversed(s))), [rng.standard_normal(s)]


def _transpose(rng):
    s = _shape(rng, (2, 4))
    perm = tuple(int(i) for i in rng.permutation(len(s)))
    return (lambda a: a.transpose(*perm)), [rng.standard_normal(s)]


def _broadcast(rng):
    s = _shape(rng)
    src = tuple(1 if rng.random() < 0.5 else n for n in s)
    return (lambda a: a.broadcast_to((2,) + s)), [rng.standard_normal(src)]


def _getitem_basic(rng):
    s = _shape(rng, (2, 3), (2, 5))
    return (lambda a: a[1:, ::2]), [rng.standard_normal(s)]


def _getitem_fancy(rng):
    s = _shape(rng, (1, 3), (2, 5))
    idx = rng.integers(0, s[0], 5)  # repeated indices accumulate
    return (lambda a: a[idx]), [rng.standard_normal(s)]


def _concat(rng):
    s = _shape(rng, (1, 3))
    axis = int(rng.integers(0, len(s)))
    s2 = tuple(n + 1 if i == axis else n for i, n in enumerate(s))
    return (lambda a, b: T.concat([a, b, a], axis=axis)), [rng.standard_normal(s), rng.standard_normal(s2)]


def _stack(rng):
    s = _shape(rng)
    axis = int(rng.integers(0, len(s) + 1))
    return (lambda a, b: T.stack([a, b], axis=axis)), [rng.standard_normal(s), rng.standard_normal(s)]


def _softmax(rng):
    s = _shape(rng)
    axis = int(rng.integers(-len(s), len(s)))
    return (lambda a: T.softmax(a, axis=axis)), [rng.standard_normal(s)]


OP_FACTORIES: dict[str, Callable] = {
    "add": _binary(lambda a, b: a + b),
    "sub": _binary(lambda a, b: a - b),
    "mul": _binary(lambda a, b: a * b),
    "div": _binary(lambda a, b: a / b),
    "neg": _unary(lambda a: -a),
    "pow": _unary(lambda a: a**3 + a**0.5, positive=True),
    "scale": _unary(lambda a: a.scale(-2.5)),
    "matmul": _matmul,
    "sum": _reduce("sum"),
    "mean": _reduce("mean"),
    "max": _reduce("max"),
    "reshape": _reshape,
    "transpose": _transpose,
    "broadcast_to": _broadcast,
    "getitem_slice": _getitem_basic,
    "getitem_index": _getitem_fancy,
    "concat": _concat,
    "stack": _stack,
    "exp": _unary(T.exp),
    "log": _unary(T.log, positive=True),
    "sqrt": _unary(T.sqrt, positive=True),
    "relu": _unary(T.relu, margin=0.1),
    "gelu": _unary(T.gelu),
    "abs": _unary(T.absolute, margin=0.1),
    "softmax": _softmax,
}


def op_checks(cases: int = CASES_PER_OP):
    for name, factory in OP_FACTORIES.items():
        for case in range(cases):
            rng = np.random.default_rng([case, len(name)])
            f, xs = factory(rng)
            yield "op", f"{name}[{case}]", (lambda *ts, f=f, c=case: _weighted(f(*ts), c)), xs, None


def _spd(rng, r, cond):
    q, _ = np.linalg.qr(rng.standard_normal((r, r)))
    return (q * np.geomspace(1.0, cond, r)) @ q.T


def linalg_checks():
    for case in range(4):
        rng = np.random.default_rng(100 + case)
        n, d = int(rng.integers(5, 9)), int(rng.integers(2, 5))

        def qr_fn(a, c=case):
            Q, R = linalg.qr(a)
            return _weighted(Q, c) + _weighted(R, c + 1)

        yield "linalg", f"qr[{case}]", qr_fn, [rng.standard_normal((n, d))], None
        R = np.triu(rng.standard_normal((d, d))) + 3 * np.eye(d)
        yield "linalg", f"triangular_inverse[{case}]", (lambda r, c=case: _weighted(linalg.triangular_inverse(r), c)), [R], None
        yield "linalg", f"neumann_inverse[{case}]", (lambda g, c=case: _weighted(linalg.neumann_inverse(g), c)), [_spd(rng, d, 5.0)], None
        for mode in ("exact", "neumann"):
            B = rng.standard_normal((n, d))
            F = rng.standard_normal((n, 3))

            def proj(b, f, mode=mode, c=case):
                return _weighted(linalg.project(linalg.build_projection(b, mode=mode), f), c)

            yield "linalg", f"projection_{mode}[{case}]", proj, [B, F], None

            def coeffs(x, b, mode=mode, c=case):
                return _weighted(linalg.reconstruction_coefficients(x, b, mode=mode), c)

            yield "linalg", f"coefficients_{mode}[{case}]", coeffs, [F, B], None


def _resolve(module, name: str):
    *path, leaf = name.split(".")
    owner = module
    for part in path:
        owner = owner[int(part)] if isinstance(owner, list) else getattr(owner, part)
    return owner, leaf


def _with_params(module, names: list[str], forward: Callable[..., Tensor], n_inputs: int):
    """``f(*inputs, *params)`` running ``forward(*inputs)`` with the named parameters swapped in."""
    def f(*ts):
        saved = []
        for name, t in zip(names, ts[n_inputs:]):
            owner, leaf = _resolve(module, name)
            saved.append((owner, leaf, getattr(owner, leaf)))
            setattr(owner, leaf, t)
        try:
            return forward(*ts[:n_inputs])
        finally:
            for owner, leaf, old in saved:
                setattr(owner, leaf, old)
    return f


DIRECTIONAL = "directional"


def _block(group, name, module, forward, inputs, seed):
    """Directional check jointly over the block inputs and all of its parameters."""
    nn.cast_module(module, np.float64)
    params = module.named_parameters()
    arrays = list(inputs) + [p.data.copy() for _, p in params]
    inner = _with_params(module, [n for n, _ in params], forward, len(inputs))
    return group, name, (lambda *ts: _weighted(inner(*ts), seed)), arrays, DIRECTIONAL


def model_checks():
    rng = np.random.default_rng(2024)
    small = ModelConfig(image_channels=(4, 8, 8), depth_channels=8, gge_channels=4, bridge_channels=4,
                        fusion_channels=8, heads=2, lowrank_dim=4, bins=6)

    lin = nn.Linear(rng, 3, 4)
    yield _block("block", "linear", lin, lin, [rng.standard_normal((2, 3))], 1)
    for stride in (1, 2):
        conv = nn.Conv2d(rng, 2, 3, 3, stride=stride)
        yield _block("block", f"conv2d_s{stride}", conv, conv, [rng.standard_normal((1, 6, 6, 2))], 2)
    ln = nn.LayerNorm(5)
    ln.gain.data = rng.uniform(0.5, 1.5, 5)
    yield _block("block", "layernorm", ln, ln, [rng.standard_normal((3, 5))], 3)
    yield ("block", "upsample_bilinear", lambda x: _weighted(nn.upsample_bilinear(x, 8, 12), 4),
           [rng.standard_normal((1, 4, 3, 2))], None)

    mha = MultiHeadAttention(rng, 4, 6, 2)
    yield _block("block", "attention", mha, mha, [rng.standard_normal((1, 5, 4)), rng.standard_normal((1, 3, 6))], 5)
    dcpm = DCPM(rng, 4, 8, 1, 1, 2)
    yield _block("block", "dcpm", dcpm, dcpm, [rng.standard_normal((1, 4, 4, 4)), rng.standard_normal((1, 2, 2, 8))], 6)
    enc = ImageEncoder(rng, (4, 8))
    yield _block("block", "image_encoder", enc, lambda x: T.concat([f.reshape(-1) for f in enc(x)], 0),
                 [rng.uniform(0, 1, (1, 8, 8, 3))], 7)
    fgde = FGDE(rng, small)
    yield _block("block", "fgde", fgde, fgde, [rng.uniform(0, 1, (1, 16, 16, 3))], 8)
    for lfr in (True, False):
        cfg = ModelConfig(**{**small.__dict__, "use_lfr": lfr})
        for mode in ("neumann", "exact"):
            if not lfr and mode == "exact":
                continue
            cfg_m = ModelConfig(**{**cfg.__dict__, "inverse_mode": mode})
            gge = GGE(rng, cfg_m)
            tag = f"gge_{mode}" if lfr else "gge_no_lfr"
            yield _block("block", tag, gge, gge, [rng.uniform(1.0, 9.0, (1, 4, 4))], 9)
    dec = DepthDecoder(rng, small)
    yield _block("block", "depth_decoder", dec, dec,
                 [rng.standard_normal((1, 8, 8, 4)), rng.standard_normal((1, 2, 2, 4))], 10)
    net = GDNet(small, seed=11, dtype=np.float64)
    yield _block("block", "gdnet", net, net, [rng.uniform(0, 1, (1, 16, 16, 3)), rng.uniform(1.0, 9.0, (1, 4, 4))], 12)

    gt = rng.uniform(1.0, 9.0, (2, 4, 4))
    pred = gt * rng.uniform(0.7, 1.3, gt.shape)
    yield "loss", "silog", (lambda p, g: silog_loss(p, g)), [pred, gt], None
    yield "loss", "l1", (lambda p, g: l1_loss(p, g)), [pred, gt], None
    yield "loss", "mse", (lambda p, g: mse_loss(p, g)), [pred, gt], None


def all_checks():
    yield from op_checks()
    yield from linalg_checks()
    yield from model_checks()


def run_suite(groups=("op", "linalg", "block", "loss"), tol: float = 1e-4, log=None) -> list[CheckResult]:
    results = []
    for group, name, f, xs, max_coords in all_checks():
        if group not in groups:
            continue
        start = time.perf_counter()
        if max_coords == DIRECTIONAL:
            report = directional_gradcheck(f, xs, n_directions=16, h=1e-6, tol=tol)
        else:
            report = gradcheck(f, xs, h=1e-6, tol=tol, max_coords=max_coords)
        res = CheckResult(group, name, report, time.perf_counter() - start)
        results.append(res)
        if log:
            log(f"{'PASS' if res.passed else 'FAIL'} {group}/{name}: {report}")
    return results
