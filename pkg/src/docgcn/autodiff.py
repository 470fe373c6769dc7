"""Dense float64 tensors with tape-based reverse-mode differentiation.

The whole model is small enough that 64-bit precision everywhere is the
right trade: gradient checks against finite differences can then be held
to tight tolerances. Ops executed outside an active ``Tape`` context are
pure forward computations (evaluation mode records nothing).
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, NonFiniteError, ShapeError
from .kernels import scatter_add_rows

_STATE = threading.local()


def _tape_stack() -> list:
    stack = getattr(_STATE, "stack", None)
    if stack is None:
        stack = []
        _STATE.stack = stack
    return stack


def _active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A contiguous float64 array plus gradient bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Tape:
    """Ordered record of executed ops; execution order is topological order."""

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _tape_stack().pop()
        assert popped is self, "tape contexts must nest"

    def __len__(self) -> int:
        return len(self._entries)

    def backward(self, loss: Tensor, params: Sequence[Tensor] = ()) -> dict[Tensor, np.ndarray]:
        """Propagate d(loss)/d(x) to every recorded tensor.

        Returns a map covering each tensor in ``params``; parameters that
        never participated in the loss get a zero gradient. Leaves with
        ``requires_grad`` also get their ``.grad`` attribute set.
        """
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        produced = {id(entry[0]) for entry in self._entries}
        if id(loss) not in produced and not loss.requires_grad:
            raise ShapeError("loss was not produced on this tape")
        leaves: dict[int, Tensor] = {}
        # Entries are appended in execution order, so a single reverse sweep
        # visits every node exactly once with its full downstream gradient.
        for out, parents, backward_fn in reversed(self._entries):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            parent_grads = backward_fn(g)
            for parent, pg in zip(parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                acc = grads.get(key)
                grads[key] = pg if acc is None else acc + pg
                if key not in produced:
                    leaves[key] = parent
        for key, leaf in leaves.items():
            leaf.grad = grads[key]
        return {
            p: grads.get(id(p), np.zeros_like(p.data))
            for p in params
        }


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced non-finite values")


def _record(data: np.ndarray, op: str, parents: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape._entries.append((out, parents, backward_fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {a.data.shape} x {b.data.shape}")

    def backward_fn(g):
        return g @ b.data.T, a.data.T @ g

    return _record(a.data @ b.data, "matmul", (a, b), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record(a.data + b.data, "add", (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward_fn(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _record(a.data * b.data, "mul", (a, b), backward_fn)


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, "neg", (a,), lambda g: (-g,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward_fn(g):
        return (g * mask,)

    return _record(np.where(mask, x.data, 0.0), "relu", (x,), backward_fn)


def sigmoid(x: Tensor) -> Tensor:
    # Two-branch form avoids overflow in exp for large |x|.
    v = x.data
    out = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))), np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))

    def backward_fn(g):
        return (g * out * (1.0 - out),)

    return _record(out, "sigmoid", (x,), backward_fn)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward_fn(g):
        return (g * (1.0 - out * out),)

    return _record(out, "tanh", (x,), backward_fn)


def dropout(x: Tensor, p: float, rng: np.random.Generator, train: bool = True) -> Tensor:
    """Inverted dropout: surviving entries scaled by 1/(1-p) at train time."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    scale = (rng.random(x.data.shape) >= p) / (1.0 - p)

    def backward_fn(g):
        return (g * scale,)

    return _record(x.data * scale, "dropout", (x,), backward_fn)


def _normalize_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(sorted(a % ndim for a in axes))


def logsumexp(x: Tensor, axis=None) -> Tensor:
    """Max-shifted log-sum-exp along ``axis`` (int, tuple, or None for all)."""
    axes = _normalize_axes(axis, x.data.ndim)
    for a in axes:
        if x.data.shape[a] == 0:
            raise ShapeError(f"logsumexp over empty axis {a} of shape {x.data.shape}")
    m = np.max(x.data, axis=axes, keepdims=True)
    out_keep = m + np.log(np.sum(np.exp(x.data - m), axis=axes, keepdims=True))
    out = np.squeeze(out_keep, axis=axes)

    def backward_fn(g):
        g_keep = np.expand_dims(g, axes)
        return (g_keep * np.exp(x.data - out_keep),)

    return _record(out, "logsumexp", (x,), backward_fn)


def reduce_sum(x: Tensor, axis=None) -> Tensor:
    axes = _normalize_axes(axis, x.data.ndim)

    def backward_fn(g):
        return (np.broadcast_to(np.expand_dims(g, axes), x.data.shape).copy(),)

    return _record(np.sum(x.data, axis=axes), "sum", (x,), backward_fn)


def mean(x: Tensor) -> Tensor:
    return mul(reduce_sum(x), Tensor(1.0 / x.data.size))


def _check_indices(idx: np.ndarray, n: int, op: str) -> None:
    # The compiled scatter kernel skips bounds checks, so validate here.
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeError(f"{op} indices out of range [0, {n})")


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows of a 2-D tensor; gradient scatters back into the table."""
    if x.data.ndim != 2:
        raise ShapeError(f"gather_rows needs a 2-D tensor, got shape {x.data.shape}")
    idx = np.asarray(idx, dtype=np.int64)
    _check_indices(idx, x.data.shape[0], "gather_rows")

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        scatter_add_rows(gx, idx, np.ascontiguousarray(g))
        return (gx,)

    return _record(x.data[idx], "gather_rows", (x,), backward_fn)


def segment_sum(rows: Tensor, idx: np.ndarray, n: int) -> Tensor:
    """Sum rows into ``n`` output slots: out[idx[e]] += rows[e]."""
    if rows.data.ndim != 2:
        raise ShapeError(f"segment_sum needs 2-D rows, got shape {rows.data.shape}")
    idx = np.asarray(idx, dtype=np.int64)
    _check_indices(idx, n, "segment_sum")
    out = np.zeros((n, rows.data.shape[1]))
    scatter_add_rows(out, idx, np.ascontiguousarray(rows.data))

    def backward_fn(g):
        return (g[idx],)

    return _record(out, "segment_sum", (rows,), backward_fn)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [p.data.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        return tuple(np.ascontiguousarray(s) for s in np.split(g, bounds, axis=axis))

    return _record(np.concatenate([p.data for p in parts], axis=axis), "concat", tuple(parts), backward_fn)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    def backward_fn(g):
        return (g.reshape(x.data.shape),)

    return _record(x.data.reshape(shape), "reshape", (x,), backward_fn)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose needs a 2-D tensor, got shape {x.data.shape}")
    return _record(x.data.T.copy(), "transpose", (x,), lambda g: (g.T.copy(),))
