"""Minimal dense tensors with reverse-mode automatic differentiation.

Every op returns a new :class:`Tensor` and, when any input requires a
gradient, records a closure that maps the upstream gradient to gradients of
the inputs.  :meth:`Tensor.backward` walks the recorded graph in reverse
creation order, so each node is visited exactly once and fan-out gradients
are summed.

Tensors wrap ``numpy.ndarray`` values.  float32 is used for training and
float64 for verification; both go through the same code.
"""

from __future__ import annotations

import contextlib
import itertools
import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "TensorError",
    "ShapeError",
    "DomainError",
    "GradError",
    "no_grad",
    "is_grad_enabled",
    "tensor",
    "matmul",
    "concat",
    "stack",
    "exp",
    "log",
    "sqrt",
    "relu",
    "gelu",
    "absolute",
    "softmax",
]


class TensorError(Exception):
    """Base class for tensor-core errors."""


class ShapeError(TensorError, ValueError):
    def __init__(self, op: str, *shapes: tuple[int, ...], detail: str = ""):
        self.op = op
        self.shapes = shapes
        joined = " and ".join(str(tuple(s)) for s in shapes)
        msg = f"{op}: incompatible shapes {joined}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class DomainError(TensorError, ValueError):
    def __init__(self, op: str, detail: str):
        self.op = op
        super().__init__(f"{op}: {detail}")


class GradError(TensorError, RuntimeError):
    pass


_state = threading.local()
_counter = itertools.count()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (per thread)."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(
        isinstance(i, (slice, int, np.integer)) or i is None or i is Ellipsis
        for i in items
    )


class Tensor:
    """A node in the autodiff graph.

    ``grad`` is only populated on tensors created with ``requires_grad=True``
    (leaves).  Interior nodes keep their gradient transiently during
    :meth:`backward`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_seq", "_consumed")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = "leaf"
        self._seq = next(_counter)
        self._consumed = False

    # -- construction -----------------------------------------------------
    @classmethod
    def from_op(
        cls,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward: Callable[[np.ndarray], Sequence[np.ndarray | None]],
        op: str,
    ) -> "Tensor":
        """Wrap an op result, recording the graph edge when needed.

        ``backward`` receives the upstream gradient and returns one gradient
        (or ``None``) per parent.  Extension ops (QR, triangular inverse) use
        this hook too.
        """
        out = cls(data)
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out._op = op
        return out

    def _lift(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    # -- properties -------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        src = self.data.dtype
        return Tensor.from_op(self.data.astype(dtype), (self,), lambda g: (g.astype(src),), "astype")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{rg}, op={self._op})"

    def __len__(self) -> int:
        return len(self.data)

    # -- backward ---------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf.

        The graph is consumed: a second call on the same loss raises.
        """
        if self.data.size != 1:
            raise GradError(f"backward: loss must be scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise GradError("backward: loss is not connected to any tensor requiring grad")
        if self._consumed:
            raise GradError("backward: graph already consumed; rebuild the loss before calling again")

        nodes: list[Tensor] = []
        seen: set[int] = set()
        stack = [self]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            nodes.append(node)
            stack.extend(p for p in node._parents if p.requires_grad)
        nodes.sort(key=lambda t: t._seq, reverse=True)

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in nodes:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if pg.shape != p.shape:
                    raise GradError(f"{node._op}: gradient shape {pg.shape} != input shape {p.shape}")
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            node._consumed = True
            node._parents = ()
            node._backward = None
        self._consumed = True

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other) -> "Tensor":
        other = self._lift(other)
        a, b = self, other
        try:
            out = np.add(a.data, b.data)
        except ValueError:
            raise ShapeError("add", a.shape, b.shape) from None
        return Tensor.from_op(
            out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add"
        )

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        other = self._lift(other)
        a, b = self, other
        try:
            out = np.subtract(a.data, b.data)
        except ValueError:
            raise ShapeError("sub", a.shape, b.shape) from None
        return Tensor.from_op(
            out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub"
        )

    def __rsub__(self, other) -> "Tensor":
        return self._lift(other) - self

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            return self.scale(other)
        other = self._lift(other)
        a, b = self, other
        try:
            out = np.multiply(a.data, b.data)
        except ValueError:
            raise ShapeError("mul", a.shape, b.shape) from None
        return Tensor.from_op(
            out,
            (a, b),
            lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
            "mul",
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            return self.scale(1.0 / other)
        other = self._lift(other)
        a, b = self, other
        try:
            out = np.divide(a.data, b.data)
        except ValueError:
            raise ShapeError("div", a.shape, b.shape) from None
        return Tensor.from_op(
            out,
            (a, b),
            lambda g: (
                _unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
            ),
            "div",
        )

    def __rtruediv__(self, other) -> "Tensor":
        return self._lift(other) / self

    def __neg__(self) -> "Tensor":
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,), "neg")

    def scale(self, c: float) -> "Tensor":
        """Multiply by a Python scalar."""
        return Tensor.from_op(self.data * c, (self,), lambda g: (g * c,), "scale")

    def __pow__(self, p: float) -> "Tensor":
        if not isinstance(p, (int, float)):
            raise TypeError("pow: exponent must be a Python scalar")
        x = self.data
        if p != int(p) and np.any(x < 0):
            raise DomainError("pow", "fractional power of a negative value")
        return Tensor.from_op(x**p, (self,), lambda g: (g * p * x ** (p - 1),), "pow")

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, self._lift(other))

    def __rmatmul__(self, other) -> "Tensor":
        return matmul(self._lift(other), self)

    # -- shape ops --------------------------------------------------------
    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.shape
        try:
            out = self.data.reshape(shape)
        except ValueError:
            raise ShapeError("reshape", src, shape) from None
        return Tensor.from_op(out, (self,), lambda g: (g.reshape(src),), "reshape")

    def transpose(self, *axes) -> "Tensor":
        """Permute axes; with no arguments swap the last two."""
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            if self.ndim < 2:
                raise ShapeError("transpose", self.shape, detail="need at least 2 dims")
            axes = tuple(range(self.ndim - 2)) + (self.ndim - 1, self.ndim - 2)
        if sorted(axes) != list(range(self.ndim)):
            raise ShapeError("transpose", self.shape, detail=f"bad axes {axes}")
        inv = tuple(np.argsort(axes))
        return Tensor.from_op(
            np.transpose(self.data, axes), (self,), lambda g: (np.transpose(g, inv),), "transpose"
        )

    permute = transpose

    def broadcast_to(self, shape: Sequence[int]) -> "Tensor":
        src = self.shape
        try:
            out = np.broadcast_to(self.data, tuple(shape))
        except ValueError:
            raise ShapeError("broadcast", src, tuple(shape)) from None
        return Tensor.from_op(out, (self,), lambda g: (_unbroadcast(g, src),), "broadcast")

    def __getitem__(self, idx) -> "Tensor":
        if isinstance(idx, Tensor):
            idx = idx.data
        src_shape, dtype = self.shape, self.data.dtype
        out = self.data[idx]
        basic = _is_basic_index(idx)

        def bw(g):
            full = np.zeros(src_shape, dtype=dtype)
            if basic:
                full[idx] += g
            else:
                np.add.at(full, idx, g)
            return (full,)

        return Tensor.from_op(np.array(out), (self,), bw, "slice")

    # -- reductions -------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        src = self.shape
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, src).copy(),)

        return Tensor.from_op(np.asarray(out), (self,), bw, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = math.prod(self.shape[a] for a in axes)
        return self.sum(axis=axis, keepdims=keepdims).scale(1.0 / count)

    def max(self, axis=None, keepdims: bool = False) -> "Tensor":
        """Maximum; gradient goes to the first maximal entry."""
        x = self.data
        if axis is None:
            flat = int(np.argmax(x))
            out = np.asarray(x.reshape(-1)[flat])
            if keepdims:
                out = out.reshape((1,) * x.ndim)

            def bw(g):
                full = np.zeros(x.size, dtype=x.dtype)
                full[flat] = g.reshape(-1)[0]
                return (full.reshape(x.shape),)

            return Tensor.from_op(out, (self,), bw, "max")
        if not isinstance(axis, int):
            raise TypeError("max: axis must be an int or None")
        arg = np.argmax(x, axis=axis)
        out = np.take_along_axis(x, np.expand_dims(arg, axis), axis=axis)

        def bw_axis(g):
            full = np.zeros_like(x)
            gg = g if keepdims else np.expand_dims(g, axis)
            np.put_along_axis(full, np.expand_dims(arg, axis), gg, axis=axis)
            return (full,)

        return Tensor.from_op(out if keepdims else out.squeeze(axis), (self,), bw_axis, "max")

    # -- elementwise shortcuts --------------------------------------------
    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def sqrt(self, grad_eps: float = 0.0) -> "Tensor":
        return sqrt(self, grad_eps=grad_eps)

    def relu(self) -> "Tensor":
        return relu(self)

    def gelu(self) -> "Tensor":
        return gelu(self)

    def abs(self) -> "Tensor":
        return absolute(self)

    def softmax(self, axis: int = -1) -> "Tensor":
        return softmax(self, axis=axis)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul", a.shape, b.shape, detail="operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape, detail="inner dimensions differ")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape, detail="batch dimensions do not broadcast") from None

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, a.shape),
            None if gb is None else _unbroadcast(gb, b.shape),
        )

    return Tensor.from_op(out, (a, b), bw, "matmul")


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat: empty input")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(t.shape for t in ts), detail=f"axis={axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor.from_op(out, ts, bw, "concat")


def stack(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    expanded = []
    for t in ts:
        shape = list(t.shape)
        ax = axis if axis >= 0 else len(shape) + 1 + axis
        shape.insert(ax, 1)
        expanded.append(t.reshape(shape))
    return concat(expanded, axis=axis)


def exp(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.exp(x.data)
    return Tensor.from_op(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log", f"operand must be strictly positive (min={x.data.min():.3g})")
    return Tensor.from_op(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x: Tensor, grad_eps: float = 0.0) -> Tensor:
    """Square root.  ``grad_eps`` floors the operand inside the derivative only."""
    x = _as_tensor(x)
    if np.any(x.data < 0):
        raise DomainError("sqrt", f"operand must be nonnegative (min={x.data.min():.3g})")
    out = np.sqrt(x.data)

    def bw(g):
        denom = np.sqrt(np.maximum(x.data, grad_eps)) if grad_eps > 0 else out
        return (g / (2.0 * denom),)

    return Tensor.from_op(out, (x,), bw, "sqrt")


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return Tensor.from_op(x.data * mask, (x,), lambda g: (g * mask,), "relu")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = _as_tensor(x)
    v = x.data
    v2 = v * v
    th = np.tanh(_GELU_C * v * (1.0 + 0.044715 * v2))
    out = 0.5 * v * (1.0 + th)

    def bw(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * v2)
        return (g * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * d_inner),)

    return Tensor.from_op(out, (x,), bw, "gelu")


def absolute(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    sign = np.sign(x.data)
    return Tensor.from_op(np.abs(x.data), (x,), lambda g: (g * sign,), "abs")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(y, (x,), bw, "softmax")
