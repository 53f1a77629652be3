"""Reverse-mode automatic differentiation over dense float64 arrays.

A global tape records every primitive whose inputs require gradients;
`backward` replays it in reverse, accumulates gradients into the leaves
and clears the tape. Tensors are plain wrappers around numpy arrays, so
all heavy lifting (matmul, reductions) goes through BLAS.

The tape is rebuilt on every forward pass and is single-threaded: one
training worker owns one tape. Inference under `no_grad()` records
nothing.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf as _erf

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


class TensorError(Exception):
    """Base class for tensor engine failures."""


class ShapeError(TensorError):
    pass


class NumericError(TensorError):
    pass


class Tape:
    __slots__ = ("records",)

    def __init__(self):
        self.records = []

    def clear(self):
        self.records.clear()


_TAPE = Tape()
_GRAD_ENABLED = True
_CHECK_FINITE = True


def tape() -> Tape:
    return _TAPE


class no_grad:
    """Context manager: disable tape recording inside the block."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def set_check_finite(flag: bool) -> bool:
    """Toggle per-op NaN/Inf detection; returns the previous setting."""
    global _CHECK_FINITE
    prev = _CHECK_FINITE
    _CHECK_FINITE = bool(flag)
    return prev


class deferred_finite_checks:
    """Skip per-op finite screens inside the block; the caller promises to
    validate its end result (training loops check the loss every step)."""

    def __enter__(self):
        self._prev = set_check_finite(False)
        return self

    def __exit__(self, *exc):
        set_check_finite(self._prev)
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if _CHECK_FINITE and not np.isfinite(arr.sum()):
            raise NumericError("non-finite values in tensor constructor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), self.requires_grad)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g, owned: bool = False):
        """Add to the gradient buffer. `owned` promises that `g` is a fresh
        array no other consumer can see, so it may be adopted without a
        defensive copy."""
        if self.grad is None:
            self.grad = g if owned else np.array(g)
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; non-Tensor operands are treated as constants
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finite_or_raise(arr, op: str):
    # single-pass screen: any NaN/Inf propagates into the sum
    if _CHECK_FINITE and not np.isfinite(arr.sum()):
        raise NumericError(f"non-finite output of op '{op}'")


def _make(arr, inputs, backward_fn, op: str) -> Tensor:
    """Wrap a primitive result; record on tape when gradients are live."""
    _finite_or_raise(arr, op)
    out = Tensor.__new__(Tensor)
    out.data = arr
    out.grad = None
    out.requires_grad = _GRAD_ENABLED and any(t.requires_grad for t in inputs)
    if out.requires_grad:
        _TAPE.records.append((out, inputs, backward_fn))
    return out


def _unbroadcast(g, shape):
    """Reduce gradient `g` back to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _acc_reduced(t, g, fresh: bool):
    """Unbroadcast then accumulate; a reduction makes the array ours."""
    r = _unbroadcast(g, t.data.shape)
    t._accumulate(r, owned=fresh or (r is not g))


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def bw(g):
        if a.requires_grad:
            _acc_reduced(a, g, fresh=False)
        if b.requires_grad:
            _acc_reduced(b, g, fresh=False)

    return _make(out, (a, b), bw, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not broadcast")

    def bw(g):
        if a.requires_grad:
            _acc_reduced(a, g, fresh=False)
        if b.requires_grad:
            _acc_reduced(b, -g, fresh=True)

    return _make(out, (a, b), bw, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")

    def bw(g):
        if a.requires_grad:
            _acc_reduced(a, g * b.data, fresh=True)
        if b.requires_grad:
            _acc_reduced(b, g * a.data, fresh=True)

    return _make(out, (a, b), bw, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    try:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = a.data / b.data
    except ValueError:
        raise ShapeError(f"div: shapes {a.shape} and {b.shape} do not broadcast")

    def bw(g):
        if a.requires_grad:
            _acc_reduced(a, g / b.data, fresh=True)
        if b.requires_grad:
            _acc_reduced(b, -g * a.data / (b.data * b.data), fresh=True)

    return _make(out, (a, b), bw, "div")


def neg(a: Tensor) -> Tensor:
    def bw(g):
        if a.requires_grad:
            a._accumulate(-g, owned=True)

    return _make(-a.data, (a,), bw, "neg")


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)
    out = a.data ** p

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * p * a.data ** (p - 1.0), owned=True)

    return _make(out, (a,), bw, "power")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * 0.5 / out, owned=True)

    return _make(out, (a,), bw, "sqrt")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * out, owned=True)

    return _make(out, (a,), bw, "exp")


# ---------------------------------------------------------------------------
# activations


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0.0), owned=True)

    return _make(out, (a,), bw, "relu")


def gelu(a: Tensor) -> Tensor:
    """Exact GELU: 0.5 x (1 + erf(x / sqrt(2)))."""
    phi = 0.5 * (1.0 + _erf(a.data * _INV_SQRT2))
    out = a.data * phi

    def bw(g):
        if a.requires_grad:
            pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT_2PI
            a._accumulate(g * (phi + a.data * pdf), owned=True)

    return _make(out, (a,), bw, "gelu")


def sigmoid(a: Tensor) -> Tensor:
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    out[~pos] = ez / (1.0 + ez)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * out * (1.0 - out), owned=True)

    return _make(out, (a,), bw, "sigmoid")


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    out = a.data - a.data.max(axis=-1, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=-1, keepdims=True)

    def bw(g):
        if a.requires_grad:
            dot = (g * out).sum(axis=-1, keepdims=True)
            a._accumulate(out * (g - dot), owned=True)

    return _make(out, (a,), bw, "softmax")


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        if a.requires_grad:
            if a.ndim == 2 and g.ndim > 2:
                # dA = sum over the stack of g_i b_i^T, as one gemm instead
                # of materializing the stacked product
                rows = a.data.shape[0]
                gm = np.moveaxis(g, -2, 0).reshape(rows, -1)
                bm = np.moveaxis(b.data, -2, -1).reshape(-1, b.data.shape[-2])
                a._accumulate(gm @ bm, owned=True)
            else:
                _acc_reduced(a, np.matmul(g, np.swapaxes(b.data, -1, -2)), fresh=True)
        if b.requires_grad:
            if b.ndim == 2 and g.ndim > 2:
                # dB = sum over the stack of a_i^T g_i
                am = np.asarray(a.data).reshape(-1, a.data.shape[-1])
                gm = g.reshape(-1, g.shape[-1])
                b._accumulate(am.T @ gm, owned=True)
            else:
                _acc_reduced(b, np.matmul(np.swapaxes(a.data, -1, -2), g), fresh=True)

    return _make(out, (a, b), bw, "matmul")


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return _make(out, (a,), bw, "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)

    def bw(g):
        if a.requires_grad:
            a._accumulate(np.transpose(g, inv))

    return _make(out, (a,), bw, "transpose")


def swap_last2(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, tuple(axes))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _make(out, tuple(tensors), bw, "concat")


def slice_(a: Tensor, key) -> Tensor:
    out = a.data[key]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out)

    def bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, key, g)
            a._accumulate(full, owned=True)

    return _make(out, (a,), bw, "slice")


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows (axis 0) by an integer index array; repeated rows allowed."""
    idx = np.asarray(indices, dtype=np.intp)
    out = a.data[idx]

    def bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accumulate(full, owned=True)

    return _make(out, (a,), bw, "gather_rows")


def scaled_attention(q: Tensor, k: Tensor, v: Tensor, scale: float) -> Tensor:
    """softmax(q k^T * scale) v over the last two axes, as one primitive.

    Equivalent to the composite expression; fused because the N x N
    probability matrices dominate the network's memory traffic.
    """
    if q.ndim < 2 or q.shape != k.shape or k.shape != v.shape:
        raise ShapeError(f"attention needs matching stacks, got {q.shape}/{k.shape}/{v.shape}")
    probs = np.matmul(q.data, np.swapaxes(k.data, -1, -2))
    probs *= scale
    probs -= probs.max(axis=-1, keepdims=True)
    np.exp(probs, out=probs)
    probs /= probs.sum(axis=-1, keepdims=True)
    out = np.matmul(probs, v.data)

    def bw(g):
        if v.requires_grad:
            v._accumulate(np.matmul(np.swapaxes(probs, -1, -2), g), owned=True)
        if q.requires_grad or k.requires_grad:
            ds = np.matmul(g, np.swapaxes(v.data, -1, -2))
            dot = (ds * probs).sum(axis=-1, keepdims=True)
            ds -= dot
            ds *= probs
            ds *= scale
            if q.requires_grad:
                q._accumulate(np.matmul(ds, k.data), owned=True)
            if k.requires_grad:
                k._accumulate(np.matmul(np.swapaxes(ds, -1, -2), q.data), owned=True)

    return _make(out, (q, k, v), bw, "scaled_attention")


def attention_probabilities(q: Tensor, k: Tensor, scale: float) -> Tensor:
    """The softmax attention matrix alone (inspection path)."""
    return softmax(mul(matmul(q, swap_last2(k)), Tensor(scale)))


# ---------------------------------------------------------------------------
# reductions


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    out = np.asarray(out)

    def bw(g):
        if a.requires_grad:
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            a._accumulate(np.broadcast_to(gg, a.data.shape))

    return _make(out, (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.asarray(a.data.mean(axis=axis, keepdims=keepdims))
    if axis is None:
        count = a.data.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for i in ax:
            count *= a.data.shape[i]

    def bw(g):
        if a.requires_grad:
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            a._accumulate(np.broadcast_to(gg, a.data.shape) / count, owned=True)

    return _make(out, (a,), bw, "mean")


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over all elements."""
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes differ, {a.shape} vs {b.shape}")
    d = sub(a, b)
    return mean(mul(d, d))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift.

    Fused primitive with the standard analytic backward; cheaper than the
    equivalent composite graph on attention-sized inputs.
    """
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc
    xhat *= inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=lead), owned=True)
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=lead), owned=True)
        if x.requires_grad:
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            dxhat -= m1
            dxhat -= xhat * m2
            dxhat *= inv
            x._accumulate(dxhat, owned=True)

    return _make(out, (x, gamma, beta), bw, "layer_norm")


# ---------------------------------------------------------------------------
# backward


def backward(loss: Tensor):
    """Run reverse accumulation from a scalar loss; clears the tape.

    Every requires_grad tensor that participated in the recorded forward
    gets a populated (possibly zero) gradient.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    records = _TAPE.records
    if loss.requires_grad and not records:
        raise TensorError("backward called without a recorded forward pass")
    loss.grad = np.ones_like(loss.data)
    for out, inputs, bw in reversed(records):
        g = out.grad
        if g is None:
            continue
        bw(g)
        out.grad = None  # an output is dead once its own record has run
    # leaves that participated but got no flow still read as zero gradient
    output_ids = {id(out) for out, _, _ in records}
    for _, inputs, _ in records:
        for t in inputs:
            if t.requires_grad and t.grad is None and id(t) not in output_ids:
                t.grad = np.zeros_like(t.data)
    _TAPE.clear()
