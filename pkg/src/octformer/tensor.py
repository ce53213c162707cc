"""Dense tensors with an optional reverse-mode tape.

All arithmetic is numpy-backed. While a :class:`Tape` is active (used as a
context manager), every operation appends a vjp closure; :func:`backward`
replays the tape once in reverse execution order, which is a valid reverse
topological order. With no active tape the operations are plain numpy with
zero bookkeeping, which is what inference and benchmarking use.

Default precision is 32-bit; gradient checks construct 64-bit tensors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import erf

from .errors import NumericError, ShapeError

_DEFAULT_DTYPE = np.float32


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError("default dtype must be float32 or float64")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


class Tensor:
    """Row-major float array with shape metadata; the unit of computation."""

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr

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

    def item(self) -> float:
        return float(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype))

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"

    # light sugar; every dunder delegates to a taped op
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    out: Tensor
    parents: tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], tuple]


class Tape:
    """Append-only operation record plus per-tensor gradient accumulators."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.gradients: dict[int, np.ndarray] = {}

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.pop()
        return False

    def grad(self, t: Tensor) -> np.ndarray:
        """Accumulated gradient of ``t``; zeros when not on a loss path."""
        g = self.gradients.get(id(t))
        if g is None:
            return np.zeros(t.shape, dtype=t.dtype)
        return g

    def reset(self) -> None:
        self.gradients = {}


_ACTIVE: list[Tape] = []


def _record(out: Tensor, parents: tuple[Tensor, ...], vjp) -> None:
    if _ACTIVE:
        _ACTIVE[-1].nodes.append(Node(out, parents, vjp))


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate tape gradients for every tensor on a path to ``loss``."""
    if loss.shape != ():
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    tape.reset()
    tape.gradients[id(loss)] = np.ones((), dtype=loss.dtype)
    for node in reversed(tape.nodes):
        g = tape.gradients.get(id(node.out))
        if g is None:
            continue
        grads = node.vjp(g)
        for parent, gp in zip(node.parents, grads):
            if gp is None:
                continue
            acc = tape.gradients.get(id(parent))
            tape.gradients[id(parent)] = gp if acc is None else acc + gp


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)
    _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)
    _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    _record(out, (a, b), vjp)
    return out


def reshape(t: Tensor, shape) -> Tensor:
    t = as_tensor(t)
    out = Tensor(t.data.reshape(shape))
    _record(out, (t,), lambda g: (g.reshape(t.shape),))
    return out


def transpose(t: Tensor, axes) -> Tensor:
    t = as_tensor(t)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(np.transpose(t.data, axes))
    _record(out, (t,), lambda g: (np.transpose(g, inv),))
    return out


def sum_(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    t = as_tensor(t)
    out = Tensor(t.data.sum(axis=axis, keepdims=keepdims))

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, t.shape).astype(t.dtype),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, t.shape).astype(t.dtype),)

    _record(out, (t,), vjp)
    return out


def mean_(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    t = as_tensor(t)
    count = t.size if axis is None else t.shape[axis]
    s = sum_(t, axis=axis, keepdims=keepdims)
    return mul(s, 1.0 / count)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must have ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} vs {b.shape}")
    try:
        out_data = np.matmul(a.data, b.data)
    except ValueError as e:
        raise ShapeError(f"matmul batch dims differ: {a.shape} vs {b.shape}") from e
    out = Tensor(out_data)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    _record(out, (a, b), vjp)
    return out


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Row gather with an absent sentinel: idx == -1 selects a zero row."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    n = x.shape[0]
    if idx.size and idx.max() >= n:
        raise IndexError(f"gather index {int(idx.max())} >= {n}")
    if idx.size and idx.min() < -1:
        raise IndexError("gather indices must be >= -1")
    present = idx >= 0
    out_data = x.data[np.clip(idx, 0, None)]
    out_data[~present] = 0.0
    out = Tensor(out_data)

    def vjp(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(gx, idx[present], g[present])
        return (gx,)

    _record(out, (x,), vjp)
    return out


def scatter_rows_add(y: Tensor, idx: np.ndarray, num_rows: int) -> Tensor:
    """Adjoint of :func:`gather_rows`: add row i of y into slot idx[i]."""
    y = as_tensor(y)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and idx.max() >= num_rows:
        raise IndexError(f"scatter index {int(idx.max())} >= {num_rows}")
    present = idx >= 0
    out_data = np.zeros((num_rows,) + y.shape[1:], dtype=y.dtype)
    np.add.at(out_data, idx[present], y.data[present])
    out = Tensor(out_data)

    def vjp(g):
        gy = g[np.clip(idx, 0, None)].copy()
        gy[~present] = 0.0
        return (gy,)

    _record(out, (y,), vjp)
    return out


def from_op(out_data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    """Wrap an externally computed forward pass as a differentiable op."""
    out = Tensor(out_data)
    _record(out, parents, vjp)
    return out


# ---------------------------------------------------------------------------
# nonlinearities and normalizations


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.maximum(x.data, 0.0))
    _record(out, (x,), lambda g: ((g * (x.data > 0)).astype(x.dtype),))
    return out


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Gaussian-CDF gelu (erf form, not the tanh approximation)."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = Tensor(x.data * cdf)

    def vjp(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        return ((g * (cdf + x.data * pdf)).astype(x.dtype),)

    _record(out, (x,), vjp)
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def vjp(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (((g - dot) * y).astype(x.dtype),)

    _record(out, (x,), vjp)
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gamma.data + beta.data)

    def vjp(g):
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = (inv * (dxhat - m1 - xhat * m2)).astype(x.dtype)
        axes = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        return dx, dgamma, dbeta

    _record(out, (x, gamma, beta), vjp)
    return out


@dataclass
class BatchNormState:
    """Affine parameters plus running statistics for one batch-norm layer."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, momentum: float = 0.1, eps: float = 1e-5,
               dtype=None) -> "BatchNormState":
        dt = dtype or default_dtype()
        return cls(
            gamma=Tensor(np.ones(channels, dtype=dt)),
            beta=Tensor(np.zeros(channels, dtype=dt)),
            running_mean=np.zeros(channels, dtype=np.float64),
            running_var=np.ones(channels, dtype=np.float64),
            momentum=momentum,
            eps=eps,
        )


def batch_norm(x: Tensor, state: BatchNormState, training: bool) -> Tensor:
    """Normalize (N, C) over the spatial dimension; eval uses stored stats."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"batch_norm expects (N, C), got {x.shape}")
    n = x.shape[0]
    gamma, beta = state.gamma, state.beta
    if training:
        if n < 2:
            raise NumericError("batch_norm training needs at least 2 rows")
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu.astype(np.float64)
        state.running_var = (1 - m) * state.running_var + m * var.astype(np.float64)
    else:
        mu = state.running_mean.astype(x.dtype)
        var = state.running_var.astype(x.dtype)
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gamma.data + beta.data)

    def vjp(g):
        dxhat = g * gamma.data
        if training:
            s1 = dxhat.sum(axis=0)
            s2 = (dxhat * xhat).sum(axis=0)
            dx = (inv * (dxhat - s1 / n - xhat * (s2 / n))).astype(x.dtype)
        else:
            dx = (dxhat * inv).astype(x.dtype)
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    _record(out, (x, gamma, beta), vjp)
    return out


def cross_entropy(logits: Tensor, labels: np.ndarray, ignore_index: int = -1) -> Tensor:
    """Mean negative log-softmax over the non-ignored rows."""
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (N, L), got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (logits.shape[0],):
        raise ShapeError("labels must be one index per logits row")
    valid = labels != ignore_index
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise NumericError("cross_entropy: every row is ignored")
    if labels[valid].min() < 0 or labels[valid].max() >= logits.shape[1]:
        raise IndexError("label out of range")

    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    picked = z[np.arange(z.shape[0]), np.clip(labels, 0, None)]
    losses = np.where(valid, lse - picked, 0.0)
    out = Tensor(np.asarray(losses.sum() / n_valid, dtype=logits.dtype))

    def vjp(g):
        p = np.exp(z - zmax)
        p /= p.sum(axis=1, keepdims=True)
        rows = np.arange(z.shape[0])
        p[rows[valid], labels[valid]] -= 1.0
        p[~valid] = 0.0
        return ((g * p / n_valid).astype(logits.dtype),)

    _record(out, (logits,), vjp)
    return out


def assert_finite(x: Tensor, context: str) -> None:
    if not np.isfinite(x.data).all():
        raise NumericError(f"non-finite values in {context}")


# ---------------------------------------------------------------------------
# parameter containers shared across the network modules


def trunc_normal(shape, std: float, rng: np.random.Generator, dtype=None) -> Tensor:
    """Normal(0, std) clipped at 2 std; the usual transformer weight init."""
    dt = dtype or default_dtype()
    v = rng.normal(0.0, std, size=shape)
    return Tensor(np.clip(v, -2.0 * std, 2.0 * std).astype(dt))


@dataclass
class LinearParams:
    weight: Tensor  # (in, out)
    bias: Tensor | None = None

    @classmethod
    def init(cls, fan_in: int, fan_out: int, rng: np.random.Generator,
             bias: bool = True, std: float = 0.02, dtype=None) -> "LinearParams":
        dt = dtype or default_dtype()
        w = trunc_normal((fan_in, fan_out), std, rng, dt)
        b = Tensor(np.zeros(fan_out, dtype=dt)) if bias else None
        return cls(w, b)


def linear(x: Tensor, p: LinearParams) -> Tensor:
    y = matmul(x, p.weight)
    return add(y, p.bias) if p.bias is not None else y


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor
    eps: float = 1e-5

    @classmethod
    def init(cls, channels: int, dtype=None) -> "LayerNormParams":
        dt = dtype or default_dtype()
        return cls(Tensor(np.ones(channels, dtype=dt)),
                   Tensor(np.zeros(channels, dtype=dt)))


def apply_layer_norm(x: Tensor, p: LayerNormParams) -> Tensor:
    return layer_norm(x, p.gamma, p.beta, p.eps)
