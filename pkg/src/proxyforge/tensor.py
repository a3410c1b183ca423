"""Dense float64 tensors with a tape-based reverse-mode autodiff.

Tensors are immutable wrappers around numpy arrays. Operations record onto the
active :class:`Tape` only when at least one input is watched by that tape, so
plain forward passes cost nothing extra.

    with Tape() as tape:
        w = tape.watch(Tensor(np.ones((2, 2))))
        loss = sum_all(matmul(w, x))
    grads = tape.backward(loss)
    grads[w.node]
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class TapeError(RuntimeError):
    """Misuse of the gradient tape (e.g. backward on an untraced value)."""


class NumericError(ArithmeticError):
    """A computation that must be finite produced NaN or Inf."""


_node_ids = itertools.count(1)
_active: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "node", "tape")

    def __init__(self, data, *, _node: int | None = None, _tape: "Tape | None" = None):
        arr = np.array(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.node = _node
        self.tape = _tape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self):
        traced = f", node={self.node}" if self.node is not None else ""
        return f"Tensor(shape={self.shape}{traced})"

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __sub__ = lambda self, other: add(self, neg(other))
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, other: matmul(self, other)


@dataclass
class TapeEntry:
    op: str
    inputs: tuple[int | None, ...]
    output: int
    backward: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


@dataclass
class Tape:
    """Ordered record of primitive applications for one trace."""

    entries: list[TapeEntry] = field(default_factory=list)
    leaves: set[int] = field(default_factory=set)

    def __enter__(self) -> "Tape":
        _active.append(self)
        return self

    def __exit__(self, *exc):
        _active.remove(self)
        return False

    def watch(self, t: Tensor | np.ndarray) -> Tensor:
        """Return a traced leaf holding the same values as ``t``."""
        data = t.data if isinstance(t, Tensor) else t
        node = next(_node_ids)
        self.leaves.add(node)
        return Tensor(data, _node=node, _tape=self)

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Gradients of scalar ``loss`` for every node it depends on.

        Entries are replayed in reverse tape order, so accumulation order is
        fixed and repeated calls give bitwise-identical results.
        """
        if loss.tape is not self or loss.node is None:
            raise TapeError("backward() called on a value not traced by this tape")
        if loss.size != 1:
            raise TapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {loss.node: np.ones(loss.shape)}
        for entry in reversed(self.entries):
            g = grads.get(entry.output)
            if g is None:
                continue
            for node, gi in zip(entry.inputs, entry.backward(g)):
                if node is None or gi is None:
                    continue
                if node in grads:
                    grads[node] = grads[node] + gi
                else:
                    grads[node] = gi
        return grads

    def gradient(self, loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
        grads = self.backward(loss)
        return [grads.get(t.node, np.zeros(t.shape)) for t in wrt]


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_for(*xs: Tensor) -> Tape | None:
    for t in reversed(_active):
        if any(x.tape is t and x.node is not None for x in xs):
            return t
    return None


def _record(op: str, out: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    tape = _tape_for(*inputs)
    if tape is None:
        return Tensor(out)
    node = next(_node_ids)
    ids = tuple(x.node if x.tape is tape else None for x in inputs)
    tape.entries.append(TapeEntry(op, ids, node, backward))
    return Tensor(out, _node=node, _tape=tape)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # only scalar-with-tensor broadcasting is supported
    if g.shape == shape:
        return g
    return np.full(shape, g.sum())


def _binary_shapes(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# -- elementwise -------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "add")
    out = a.data + b.data
    return _record("add", out, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "sub")
    out = a.data - b.data
    return _record("sub", out, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data
    return _record("mul", ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "div")
    ad, bd = a.data, b.data
    with np.errstate(all="ignore"):
        out = ad / bd
    return _record("div", out, (a, b),
                   lambda g: (_unbroadcast(g / bd, a.shape),
                              _unbroadcast(-g * ad / (bd * bd), b.shape)))


def _unary(op: str, a, fwd, dfdx) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    with np.errstate(all="ignore"):
        y = fwd(x)
    return _record(op, y, (a,), lambda g: (g * dfdx(x, y),))


def neg(a) -> Tensor:
    return _unary("neg", a, np.negative, lambda x, y: -np.ones_like(x))


def relu(a) -> Tensor:
    # relu'(0) := 0
    return _unary("relu", a, lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(np.float64))


def exp(a) -> Tensor:
    return _unary("exp", a, np.exp, lambda x, y: y)


def log(a) -> Tensor:
    return _unary("log", a, np.log, lambda x, y: 1.0 / x)


def abs(a) -> Tensor:  # noqa: A001 - mirrors the op vocabulary
    return _unary("abs", a, np.abs, lambda x, y: np.sign(x))


def sqrt(a) -> Tensor:
    return _unary("sqrt", a, np.sqrt, lambda x, y: 0.5 / y)


def square(a) -> Tensor:
    return _unary("square", a, np.square, lambda x, y: 2.0 * x)


def reciprocal(a) -> Tensor:
    return _unary("reciprocal", a, lambda x: 1.0 / x, lambda x, y: -y * y)


def sigmoid(a) -> Tensor:
    return _unary("sigmoid", a, lambda x: 0.5 * (1.0 + np.tanh(0.5 * x)), lambda x, y: y * (1.0 - y))


ELEMENTWISE = {
    "add": add, "mul": mul, "relu": relu, "exp": exp, "log": log, "abs": abs,
    "neg": neg, "sqrt": sqrt, "square": square, "reciprocal": reciprocal,
    "sigmoid": sigmoid,
}


def elementwise(op: str, a, b=None) -> Tensor:
    fn = ELEMENTWISE[op]
    if op in ("add", "mul"):
        if b is None:
            raise TypeError(f"{op} needs two operands")
        return fn(a, b)
    return fn(a)


# -- shape and reduction -------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product; leading (batch) dims of ``a`` are allowed.

    ``b`` is either 2-D (shared across the batch) or has the same leading dims.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise DimensionError(f"matmul: batch dimensions differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _record("matmul", ad @ bd, (a, b), backward)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    return _record("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    inv = np.argsort(axes)
    return _record("transpose", np.transpose(a.data, axes), (a,),
                   lambda g: (np.transpose(g, inv),))


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    return _record("sum", np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def mean_all(a) -> Tensor:
    a = _as_tensor(a)
    shape, n = a.shape, a.size
    return _record("mean", np.array(a.data.mean()), (a,),
                   lambda g: (np.full(shape, float(g) / n),))


def softmax_lastaxis(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    y = z / z.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _record("softmax", y, (a,), backward)


def log_softmax_lastaxis(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    p = np.exp(y)

    def backward(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _record("log_softmax", y, (a,), backward)


def take_rows(table, idx) -> Tensor:
    """Embedding lookup: ``table[idx]`` for an integer index array."""
    table = _as_tensor(table)
    idx = np.asarray(idx, dtype=np.int64)
    shape = table.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, idx.reshape(-1), g.reshape(-1, shape[-1]))
        return (out,)

    return _record("take_rows", table.data[idx], (table,), backward)


def pick_last(a, idx) -> Tensor:
    """Select ``a[..., idx]`` along the last axis, one index per leading position."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape != a.shape[:-1]:
        raise DimensionError(f"pick_last: index shape {idx.shape} vs {a.shape[:-1]}")
    shape = a.shape
    out = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        full = np.zeros(shape)
        np.put_along_axis(full, idx[..., None], g[..., None], axis=-1)
        return (full,)

    return _record("pick_last", out, (a,), backward)


def slice_axis(a, axis: int, index: int) -> Tensor:
    """``a`` indexed at ``index`` along ``axis`` (axis removed)."""
    a = _as_tensor(a)
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        sl = [slice(None)] * len(shape)
        sl[axis] = index
        full[tuple(sl)] = g
        return (full,)

    return _record("slice", np.take(a.data, index, axis=axis), (a,), backward)


# -- derived quantities -------------------------------------------------------


def hvp(loss_fn: Callable[[list[Tensor]], Tensor], params: Sequence[Tensor | np.ndarray],
        v: np.ndarray) -> Tensor:
    """Hessian-vector product by central differencing of gradients.

    ``loss_fn`` maps a list of traced parameter tensors to a scalar loss; ``v``
    has the length of the flattened parameters. Step size is
    ``1e-3 * (1 + max|theta|)``.
    """
    arrays = [p.data if isinstance(p, Tensor) else np.asarray(p, dtype=np.float64) for p in params]
    shapes = [a.shape for a in arrays]
    theta = np.concatenate([a.reshape(-1) for a in arrays]) if arrays else np.zeros(0)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.shape != theta.shape:
        raise DimensionError(f"hvp: v has length {v.size}, params have {theta.size}")
    if not np.any(v):
        return Tensor(np.zeros_like(theta))
    eps = 1e-3 * (1.0 + (np.abs(theta).max() if theta.size else 0.0))

    def grad_at(flat):
        with Tape() as tape:
            leaves, off = [], 0
            for s in shapes:
                n = math.prod(s)
                leaves.append(tape.watch(flat[off:off + n].reshape(s)))
                off += n
            loss = loss_fn(leaves)
            grads = tape.gradient(loss, leaves)
        return np.concatenate([g.reshape(-1) for g in grads])

    out = (grad_at(theta + eps * v) - grad_at(theta - eps * v)) / (2.0 * eps)
    if not np.all(np.isfinite(out)):
        raise NumericError("hvp produced non-finite values")
    return Tensor(out)
