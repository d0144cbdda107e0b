"""Central finite-difference verification of autodiff gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import GradError, Tensor


@dataclass
class GradcheckReport:
    max_rel_error: float
    tol: float
    n_checked: int
    # (input index, flat coordinate, analytic, numeric, relative error)
    failing: list[tuple[int, int, float, float, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failing

    def __str__(self) -> str:
        status = "ok" if self.passed else f"{len(self.failing)} failing coords"
        return f"gradcheck max_rel={self.max_rel_error:.3e} tol={self.tol:g} n={self.n_checked} {status}"


def _scalar(out: Tensor) -> float:
    if out.size != 1:
        raise GradError(f"gradcheck: function must be scalar-valued, got shape {out.shape}")
    return float(out.data.reshape(-1)[0])


def gradcheck(
    f: Callable[..., Tensor],
    x: np.ndarray | Tensor | Sequence[np.ndarray | Tensor],
    h: float = 1e-6,
    tol: float = 1e-4,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradcheckReport:
    """Compare autodiff against ``(f(x + h e_i) - f(x - h e_i)) / 2h``.

    ``x`` may be a single array or a list of arrays, in which case ``f`` is
    called with one tensor per array.  Inputs are promoted to float64.

    The relative error of a coordinate is ``|a - n| / max(|a|, |n|, floor)``
    where ``floor = 1e-3 * max_j |n_j|`` (plus a 1e-10 absolute floor), so
    coordinates whose true gradient is negligible compared to the rest do not
    dominate the report.  ``max_coords`` checks a seeded random subset of
    coordinates per input.
    """
    single = isinstance(x, (np.ndarray, Tensor)) or np.isscalar(x)
    raw = [x] if single else list(x)
    arrays = [np.array(a.data if isinstance(a, Tensor) else a, dtype=np.float64) for a in raw]

    inputs = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = f(*inputs)
    _scalar(out)
    out.backward()
    analytic = [np.zeros_like(a) if t.grad is None else t.grad.reshape(a.shape) for a, t in zip(arrays, inputs)]

    def evaluate(vals: list[np.ndarray]) -> float:
        return _scalar(f(*[Tensor(v) for v in vals]))

    rng = np.random.default_rng(seed)
    failing: list[tuple[int, int, float, float, float]] = []
    max_rel = 0.0
    n_checked = 0
    for k, a in enumerate(arrays):
        coords = np.arange(a.size)
        if max_coords is not None and a.size > max_coords:
            coords = np.sort(rng.choice(a.size, size=max_coords, replace=False))
        numeric = np.empty(len(coords))
        for j, i in enumerate(coords):
            plus = [v.copy() for v in arrays]
            minus = [v.copy() for v in arrays]
            plus[k].reshape(-1)[i] += h
            minus[k].reshape(-1)[i] -= h
            numeric[j] = (evaluate(plus) - evaluate(minus)) / (2.0 * h)
        an = analytic[k].reshape(-1)[coords]
        floor = max(1e-3 * float(np.max(np.abs(numeric), initial=0.0)), 1e-10)
        denom = np.maximum(np.maximum(np.abs(an), np.abs(numeric)), floor)
        rel = np.abs(an - numeric) / denom
        n_checked += len(coords)
        if rel.size:
            max_rel = max(max_rel, float(rel.max()))
        for j in np.nonzero(rel >= tol)[0]:
            failing.append((k, int(coords[j]), float(an[j]), float(numeric[j]), float(rel[j])))
    return GradcheckReport(max_rel_error=max_rel, tol=tol, n_checked=n_checked, failing=failing)


def directional_gradcheck(
    f: Callable[..., Tensor],
    x: Sequence[np.ndarray | Tensor],
    n_directions: int = 8,
    h: float = 1e-6,
    tol: float = 1e-4,
    seed: int = 0,
) -> GradcheckReport:
    """Compare ``<grad f, v>`` with ``(f(x + h v) - f(x - h v)) / 2h`` for random unit ``v``.

    Each direction spans every input at once, so many tiny per-coordinate
    derivatives (which central differences cannot resolve at ``h``) are
    checked in aggregate.  ``failing`` entries use the direction index as the
    coordinate and ``-1`` as the input index.
    """
    raw = list(x)
    arrays = [np.array(a.data if isinstance(a, Tensor) else a, dtype=np.float64) for a in raw]
    inputs = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = f(*inputs)
    _scalar(out)
    out.backward()
    grads = [np.zeros_like(a) if t.grad is None else t.grad.reshape(a.shape) for a, t in zip(arrays, inputs)]

    rng = np.random.default_rng(seed)
    failing = []
    max_rel = 0.0
    for k in range(n_directions):
        v = [rng.standard_normal(a.shape) for a in arrays]
        norm = np.sqrt(sum(float((d * d).sum()) for d in v))
        v = [d / norm for d in v]
        an = sum(float((g * d).sum()) for g, d in zip(grads, v))
        plus = _scalar(f(*[Tensor(a + h * d) for a, d in zip(arrays, v)]))
        minus = _scalar(f(*[Tensor(a - h * d) for a, d in zip(arrays, v)]))
        num = (plus - minus) / (2.0 * h)
        rel = abs(an - num) / max(abs(an), abs(num), 1e-10)
        max_rel = max(max_rel, rel)
        if rel >= tol:
            failing.append((-1, k, an, num, rel))
    return GradcheckReport(max_rel_error=max_rel, tol=tol, n_checked=n_directions, failing=failing)
