"""Dense tensor arithmetic with reverse-mode differentiation.

Values are numpy arrays wrapped in :class:`Tensor`; the canonical layout is
rank-4 (N, C, H, W) row-major, but intermediate views (matmul operands,
reduced statistics) may have other ranks. Gradients are recorded on an
explicit :class:`GradTape` in construction order and replayed strictly in
reverse, so accumulation order is deterministic.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erf


class DimensionError(ValueError):
    """Shape or extent mismatch between operands."""


class NumericError(ArithmeticError):
    """An operation produced NaN/Inf, or the tape was misused."""


# Finite checks cost one memory pass per op; flip off for hot loops if needed.
FINITE_CHECKS = True

_EPS = 1e-6

_TAPE_STACK: list["GradTape"] = []


def _check_finite(data: np.ndarray, op: str) -> None:
    if FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by '{op}'")


class Tensor:
    """Immutable dense array participating in gradient recording."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
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
    def precision(self) -> str:
        return "double" if self.data.dtype == np.float64 else "single"

    def item(self) -> float:
        if self.size != 1:
            raise DimensionError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = f" '{self.name}'" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, dtype={self.data.dtype})"

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, _wrap(other, self.dtype))

    def __pow__(self, p):
        return power(self, p)

    def __neg__(self):
        return mul(self, -1.0)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if len(axes) > 1 else axes[0])

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


class GradTape:
    """Append-only record of differentiable operations.

    Single-owner: one training step builds one tape and calls
    :meth:`backward` exactly once. Backward walks nodes in strict reverse
    construction order, so every tensor's gradient is fully accumulated
    before its producing node is processed.
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._grads: dict[int, np.ndarray] = {}
        self._consumed = False

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False

    def _record(self, out: Tensor, inputs: tuple, backward: Callable) -> None:
        self._nodes.append((out, inputs, backward))

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)=1 and propagate through every recorded node."""
        if self._consumed:
            raise NumericError("backward() called twice on the same tape")
        self._consumed = True
        if loss.size != 1:
            raise DimensionError("backward() requires a scalar loss")
        grads = self._grads
        grads[id(loss)] = np.ones_like(loss.data)
        for out, inputs, backward_fn in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, backward_fn(g)):
                if gi is None:
                    continue
                slot = grads.get(id(inp))
                if slot is None:
                    grads[id(inp)] = gi.copy() if gi.base is not None else gi
                else:
                    slot += gi

    def grad(self, t: Tensor) -> np.ndarray:
        """Accumulated gradient of the loss w.r.t. `t` (zeros if unreachable)."""
        g = self._grads.get(id(t))
        if g is None:
            return np.zeros_like(t.data)
        return g


def _active() -> Optional[GradTape]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def record(out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    tape = _active()
    if tape is not None:
        tape._record(out, tuple(inputs), backward)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum `g` down to `shape` after numpy broadcasting."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary_shapes_ok(a: Tensor, b: Tensor) -> None:
    # equal shapes, or per-channel (N,C,1,1)-style broadcast
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"incompatible shapes {a.shape} vs {b.shape}") from None


# -- elementwise ---------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        out = Tensor(a.data + b)
        _check_finite(out.data, "add")
        return record(out, (a,), lambda g: (g,))
    _binary_shapes_ok(a, b)
    out = Tensor(a.data + b.data)
    _check_finite(out.data, "add")
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes_ok(a, b)
    out = Tensor(a.data - b.data)
    _check_finite(out.data, "sub")
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        out = Tensor(a.data * b)
        _check_finite(out.data, "mul")
        return record(out, (a,), lambda g: (g * b,))
    _binary_shapes_ok(a, b)
    out = Tensor(a.data * b.data)
    _check_finite(out.data, "mul")
    return record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes_ok(a, b)
    out = Tensor(a.data / b.data)
    _check_finite(out.data, "div")

    def backward(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return record(out, (a, b), backward)


def power(a: Tensor, p: float) -> Tensor:
    out = Tensor(a.data ** p)
    _check_finite(out.data, "power")
    return record(out, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def sigmoid(x: Tensor) -> Tensor:
    # stable two-branch evaluation
    d = x.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out = Tensor(y)
    _check_finite(out.data, "sigmoid")
    return record(out, (x,), lambda g: (g * y * (1.0 - y),))


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-CDF GELU: x * Phi(x)."""
    d = x.data
    phi = 0.5 * (1.0 + erf(d * _INV_SQRT2))
    out = Tensor(d * phi)
    _check_finite(out.data, "gelu")

    def backward(g):
        pdf = np.exp(-0.5 * d * d) * _INV_SQRT2PI
        return (g * (phi + d * pdf),)

    return record(out, (x,), backward)


def abs_(x: Tensor) -> Tensor:
    """|x| with subgradient 0 at ties."""
    out = Tensor(np.abs(x.data))
    return record(out, (x,), lambda g: (g * np.sign(x.data),))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(x.data)
    out = Tensor(y)
    _check_finite(out.data, "exp")
    return record(out, (x,), lambda g: (g * y,))


# -- reductions ----------------------------------------------------------

def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g.reshape((1,) * x.ndim), x.shape),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, x.shape),)

    return record(out, (x,), backward)


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for a in ax:
            n *= x.shape[a]
    s = reduce_sum(x, axis, keepdims)
    return mul(s, 1.0 / n)


# -- structure ops -------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    return record(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(np.ascontiguousarray(x.data.transpose(axes)))
    return record(out, (x,), lambda g: (g.transpose(inv),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes."""
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents disagree: {a.shape} vs {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))
    _check_finite(out.data, "matmul")

    def backward(g):
        ga = np.matmul(g, b.data.swapaxes(-1, -2))
        gb = np.matmul(a.data.swapaxes(-1, -2), g)
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return record(out, (a, b), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along `axis`."""
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax axis {axis} out of range for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)
    _check_finite(out.data, "softmax")

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return record(out, (x,), backward)


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    ref = parts[0].shape
    for p in parts[1:]:
        if len(p.shape) != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(p.shape, ref)) if i != axis % len(ref)
        ):
            raise DimensionError("concat parts disagree outside the concat axis")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        sl = [slice(None)] * g.ndim
        grads = []
        for i in range(len(parts)):
            sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            grads.append(np.ascontiguousarray(g[tuple(sl)]))
        return tuple(grads)

    return record(out, tuple(parts), backward)


def narrow(x: Tensor, axis: int, start: int, length: int, step: int = 1) -> Tensor:
    """Strided slice along one axis; backward scatters into zeros."""
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, start + (length - 1) * step + 1, step)
    sl = tuple(sl)
    out = Tensor(np.ascontiguousarray(x.data[sl]))

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[sl] = g
        return (gx,)

    return record(out, (x,), backward)


def split_channels(x: Tensor, sizes: Sequence[int]) -> list[Tensor]:
    if sum(sizes) != x.shape[1]:
        raise DimensionError(f"split sizes {tuple(sizes)} do not sum to C={x.shape[1]}")
    parts, off = [], 0
    for s in sizes:
        parts.append(narrow(x, 1, off, s))
        off += s
    return parts


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    return concat(parts, axis=1)


def interleaved_split(x: Tensor) -> tuple[Tensor, Tensor]:
    """Even-indexed channels -> attention path, odd-indexed -> gate path."""
    c = x.shape[1]
    if c % 2 != 0:
        raise DimensionError(f"interleaved_split requires even C, got {c}")
    att = narrow(x, 1, 0, c // 2, step=2)
    gate = narrow(x, 1, 1, c // 2, step=2)
    return att, gate


def interleaved_merge(att: Tensor, gate: Tensor) -> Tensor:
    if att.shape != gate.shape:
        raise DimensionError(f"interleaved_merge shapes disagree: {att.shape} vs {gate.shape}")
    n, c, h, w = att.shape
    y = np.empty((n, 2 * c, h, w), dtype=att.dtype)
    y[:, 0::2] = att.data
    y[:, 1::2] = gate.data
    out = Tensor(y)

    def backward(g):
        return (np.ascontiguousarray(g[:, 0::2]), np.ascontiguousarray(g[:, 1::2]))

    return record(out, (att, gate), backward)


def channel_stats(x: Tensor, eps: float = _EPS) -> tuple[Tensor, Tensor]:
    """Per-(batch, channel) spatial mean and std; std floored by `eps` under the root."""
    mu = reduce_mean(x, axis=(2, 3), keepdims=True)
    var = reduce_mean((x - mu) * (x - mu), axis=(2, 3), keepdims=True)
    std = power(add(var, eps), 0.5)
    return mu, std


# -- oracles -------------------------------------------------------------

def finite_diff_grad(f: Callable[[Tensor], float], x: Tensor, h: float = 1e-4) -> np.ndarray:
    """Central finite differences of a tensor->scalar map, element by element."""
    base = x.data.copy()
    g = np.zeros_like(base)
    flat = base.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(Tensor(base)))
        flat[i] = orig - h
        fm = float(f(Tensor(base)))
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g
