"""Dense float64 tensors with a reverse-mode tape.

Ops record themselves on the innermost active :class:`Tape` whenever at
least one input requires a gradient. Outside a tape everything runs as
plain numpy, which is what decoding and finite-difference probes use.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    pass


class DomainError(ValueError):
    pass


class _Local(threading.local):
    def __init__(self):
        self.stack = []


_local = _Local()


def _tape_stack() -> list:
    return _local.stack


def active_tape() -> "Tape | None":
    stack = _local.stack
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")
    # make numpy defer to our reflected operators (ndarray - Tensor etc.)
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if type(data) is not np.ndarray or data.dtype != np.float64:
            data = np.asarray(data, dtype=np.float64)
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


class Tape:
    """Ordered record of primitive ops; replayed in reverse by :meth:`backward`."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        assert stack and stack[-1] is self
        stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, parents: tuple[Tensor, ...], backward: Callable) -> None:
        self.nodes.append((out, parents, backward))

    def backward(self, root: Tensor, seed: np.ndarray | None = None) -> None:
        if seed is None:
            if root.data.size != 1:
                raise DimensionError("backward() without a seed needs a scalar root")
            seed = np.ones_like(root.data)
        root.grad = _accum(root.grad, np.asarray(seed, dtype=np.float64))
        for out, parents, fn in reversed(self.nodes):
            g = out.grad
            if g is None:
                continue
            grads = fn(g)
            for p, pg in zip(parents, grads):
                if pg is not None and p.requires_grad:
                    p.grad = _accum(p.grad, pg)
            if not out.name:
                # intermediate buffers are not needed after their adjoint is pushed
                out.grad = None


def _accum(current, g):
    # never mutate in place: one adjoint array may be handed to several parents
    return g if current is None else current + g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def record_op(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap ``data`` as the output of a primitive.

    ``backward(g)`` must return one adjoint (or None) per parent, already
    shaped like that parent.
    """
    stack = _local.stack
    if stack and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        stack[-1].nodes.append((out, tuple(parents), backward))
        return out
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(ufunc, a: Tensor, b: Tensor, op: str) -> np.ndarray:
    try:
        return ufunc(a.data, b.data)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------- binary ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.data.shape, b.data.shape
    return record_op(_binary(np.add, a, b, "add"), (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.data.shape, b.data.shape
    return record_op(_binary(np.subtract, a, b, "sub"), (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _binary(np.multiply, a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return record_op(out, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _binary(np.divide, a, b, "div")
    ad, bd = a.data, b.data

    def backward(g):
        return (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return record_op(out, (a, b), backward)


def matmul(a, b) -> Tensor:
    """``np.matmul`` semantics for operands with at least two dims."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    sa, sb = ad.shape, bd.shape
    if len(sa) < 2 or len(sb) < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {sa} and {sb}")
    if sa[-1] != sb[-2]:
        raise DimensionError(f"matmul: inner dimensions differ, {sa} @ {sb}")
    try:
        out = ad @ bd
    except ValueError:
        raise DimensionError(f"matmul: batch dims {sa} and {sb} do not broadcast") from None

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2:
                # fold batch dims into one gemm instead of a broadcast + sum
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return record_op(out, (a, b), backward)


def maximum(a, floor: float) -> Tensor:
    """Elementwise max against a constant; the adjoint passes where ``a > floor``."""
    a = as_tensor(a)
    keep = a.data > floor
    return record_op(np.where(keep, a.data, floor), (a,), lambda g: (g * keep,))


def clamp_min(a, eps: float) -> Tensor:
    return maximum(a, eps)


# ----------------------------------------------------------------- unary ops


def neg(a) -> Tensor:
    a = as_tensor(a)
    return record_op(-a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return record_op(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of a non-positive value")
    ad = a.data
    return record_op(np.log(ad), (a,), lambda g: (g / ad,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return record_op(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # tanh form never overflows, unlike 1 / (1 + exp(-x)) for large negative x
    out = 0.5 + 0.5 * np.tanh(0.5 * a.data)
    return record_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return record_op(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt of a negative value")
    out = np.sqrt(a.data)
    return record_op(out, (a,), lambda g: (g * 0.5 / out,))


_ELEMENTWISE = {
    "tanh": tanh,
    "sigmoid": sigmoid,
    "exp": exp,
    "log": log,
    "neg": neg,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
}


def elementwise(f: str, *args) -> Tensor:
    """Dispatch a pointwise primitive by name (``"tanh"``, ``"mul"``, ...)."""
    try:
        fn = _ELEMENTWISE[f]
    except KeyError:
        raise ValueError(f"unknown elementwise op {f!r}") from None
    return fn(*args)


# ------------------------------------------------------------ reductions etc.


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return record_op(out, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[i] for i in axes]))
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return record_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return record_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return record_op(a.data[index], (a,), backward)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ax = axis % ts[0].ndim
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(
            t.shape[i] != ts[0].shape[i] for i in range(t.ndim) if i != ax
        ):
            raise DimensionError(f"concat: incompatible shapes {[x.shape for x in ts]}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def backward(g):
        return tuple(
            np.take(g, range(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(ts))
        )

    return record_op(np.concatenate([t.data for t in ts], axis=ax), ts, backward)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if len({t.shape for t in ts}) != 1:
        raise DimensionError(f"stack: shapes differ {[t.shape for t in ts]}")
    ax = axis % (ts[0].ndim + 1)

    def backward(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(ts)))

    return record_op(np.stack([t.data for t in ts], axis=ax), ts, backward)


def embedding(table, ids) -> Tensor:
    """Rows of ``table`` (K x d) selected by integer ``ids``; adjoints scatter-add."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    k = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= k):
        raise IndexError(f"embedding id out of range [0, {k})")
    shape = table.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return record_op(table.data[ids], (table,), backward)


def pick(a, ids) -> Tensor:
    """``a[b, ids[b]]`` for a 2-d ``a``."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError("pick expects a 2-d tensor")
    ids = np.asarray(ids, dtype=np.int64)
    rows = np.arange(a.shape[0])
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[rows, ids] = g
        return (full,)

    return record_op(a.data[rows, ids], (a,), backward)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax axis {axis} invalid for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record_op(out, (x,), backward)
