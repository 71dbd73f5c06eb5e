"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every op that touches a tensor with ``requires_grad`` appends a node to the
graph. Node ids grow monotonically, so walking reachable nodes in decreasing
id order is a valid reverse topological order; that walk is :func:`backward`.

The op set is deliberately small: what the contrastive losses, the
regularisers and the convolutional encoder need, nothing more.
"""
from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ConfigurationError, ContractViolation, NumericDomainError, NumericError

_ids = itertools.count()
_state = threading.local()

_SQRT_2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Evaluate ops without recording graph nodes."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse-mode AD.

    ``grad`` is allocated lazily on the first backward pass that reaches the
    tensor, and only leaves (tensors created by the user with
    ``requires_grad=True``) ever receive one.
    """

    __slots__ = ("data", "grad", "requires_grad", "id", "op", "_parents", "_vjp")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.id = next(_ids)
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(f"item: tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

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
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], vjp, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.id = next(_ids)
    out.op = op
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ConfigurationError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise binary ----------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a.data, b.data)
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a.data, b.data)
    sa, sb = a.shape, b.shape
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a.data, b.data)
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a.data, b.data)
    ad, bd = a.data, b.data
    out = ad / bd

    def vjp(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return _node(out, (a, b), vjp, "div")


def logaddexp(a, b) -> Tensor:
    """log(exp(a) + exp(b)), stable for large arguments."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("logaddexp", a.data, b.data)
    out = np.logaddexp(a.data, b.data)
    sa, sb = a.shape, b.shape

    def vjp(g):
        return (_unbroadcast(g * np.exp(a.data - out), sa),
                _unbroadcast(g * np.exp(b.data - out), sb))

    return _node(out, (a, b), vjp, "logaddexp")


# -- elementwise unary -----------------------------------------------------
def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _node(ad * ad, (a,), lambda g: (2.0 * ad * g,), "square")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NumericDomainError("log", "argument must be strictly positive")
    ad = a.data
    return _node(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sqrt(a) -> Tensor:
    """Square root; the derivative at 0 is taken as 0 (subgradient)."""
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise NumericDomainError("sqrt", "argument must be non-negative")
    out = np.sqrt(a.data)

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(out > 0, 0.5 / out, 0.0)
        return (g * d,)

    return _node(out, (a,), vjp, "sqrt")


def gelu(a) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT_2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return _node(x * cdf, (a,), lambda g: (g * (cdf + x * pdf),), "gelu")


def mask(a, keep) -> Tensor:
    """Zero the entries where ``keep`` is False. ``keep`` broadcasts against ``a``."""
    a = as_tensor(a)
    keep = np.asarray(keep, dtype=bool)
    _broadcast_shape("mask", a.data, keep)
    k = keep.astype(np.float64)
    return _node(a.data * k, (a,), lambda g: (_unbroadcast(g * k, a.shape),), "mask")


def masked_fill(a, where, value: float) -> Tensor:
    """Replace entries where ``where`` is True by a constant."""
    a = as_tensor(a)
    where = np.broadcast_to(np.asarray(where, dtype=bool), a.shape)
    out = np.where(where, value, a.data)
    return _node(out, (a,), lambda g: (np.where(where, 0.0, g),), "masked_fill")


# -- reductions ------------------------------------------------------------
def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    shape = a.shape

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(np.asarray(out, dtype=np.float64), (a,), vjp, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return tsum(a, axes, keepdims) / float(n)


def amax(a, axis: int) -> Tensor:
    """Max over one axis; the gradient goes to the first maximal index."""
    a = as_tensor(a)
    axis = axis % a.ndim
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def vjp(g):
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (grad,)

    return _node(out, (a,), vjp, "amax")


def logsumexp(a, axis: int) -> Tensor:
    """log(sum(exp(a))) over one axis, stabilised by the axis maximum.

    Entries equal to -inf contribute nothing and receive zero gradient.
    """
    a = as_tensor(a)
    axis = axis % a.ndim
    m = np.max(a.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(under="ignore"):
        s = np.exp(a.data - m).sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)

    def vjp(g):
        with np.errstate(under="ignore"):
            p = np.exp(a.data - np.expand_dims(out, axis))
        return (p * np.expand_dims(g, axis),)

    return _node(out, (a,), vjp, "logsumexp")


# -- linear algebra --------------------------------------------------------
def matmul(a, b) -> Tensor:
    """Matrix product on the trailing two axes, broadcasting leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ConfigurationError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ConfigurationError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError:
        raise ConfigurationError(f"matmul: leading axes of {a.shape} and {b.shape} do not broadcast") from None
    ad, bd = a.data, b.data

    def vjp(g):
        return (_unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape),
                _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape))

    return _node(out, (a, b), vjp, "matmul")


# -- shape manipulation ----------------------------------------------------
def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ConfigurationError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from None
    src = a.shape
    return _node(out, (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(ax % a.ndim for ax in axes)
    inv = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return _node(np.swapaxes(a.data, ax1, ax2), (a,),
                 lambda g: (np.swapaxes(g, ax1, ax2),), "swapaxes")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = a.data[index]
    shape = a.shape

    def vjp(g):
        grad = np.zeros(shape)
        np.add.at(grad, index, g)
        return (grad,)

    return _node(np.array(out, dtype=np.float64), (a,), vjp, "getitem")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ConfigurationError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _node(out, ts, lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


# -- sequence ops ------------------------------------------------------------
def max_pool_time(a, axis: int = -2) -> Tensor:
    """Non-overlapping max-pool with window 2 along ``axis``.

    A trailing odd element is dropped. Ties route the gradient to the
    earlier timestamp.
    """
    a = as_tensor(a)
    axis = axis % a.ndim
    n = a.shape[axis] // 2
    if n == 0:
        raise ConfigurationError("max_pool_time: axis has length < 2")
    x = np.moveaxis(a.data, axis, -1)[..., : 2 * n]
    pairs = x.reshape(x.shape[:-1] + (n, 2))
    second = pairs[..., 1] > pairs[..., 0]
    out = np.where(second, pairs[..., 1], pairs[..., 0])
    shape = a.shape

    def vjp(g):
        gm = np.moveaxis(g, axis, -1)
        grad_pairs = np.zeros(gm.shape + (2,))
        grad_pairs[..., 0] = np.where(second, 0.0, gm)
        grad_pairs[..., 1] = np.where(second, gm, 0.0)
        moved = np.zeros(np.moveaxis(np.empty(shape), axis, -1).shape)
        moved[..., : 2 * n] = grad_pairs.reshape(gm.shape[:-1] + (2 * n,))
        return (np.moveaxis(moved, -1, axis),)

    return _node(np.moveaxis(out, -1, axis), (a,), vjp, "max_pool_time")


def conv1d_causal(x, weight, bias, dilation: int = 1) -> Tensor:
    """Dilated causal 1-D convolution over the time axis.

    x: (..., T, C_in), weight: (K, C_in, C_out), bias: (C_out,).
    Output step t sees inputs t - j*dilation for j = 0..K-1 only.
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if weight.ndim != 3 or x.shape[-1] != weight.shape[1] or bias.shape != (weight.shape[2],):
        raise ConfigurationError(
            f"conv1d_causal: incompatible shapes x{x.shape} w{weight.shape} b{bias.shape}")
    K = weight.shape[0]
    T = x.shape[-2]
    pad = (K - 1) * dilation
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, 0), (0, 0)]
    xp = np.pad(x.data, widths)
    w = weight.data
    out = np.broadcast_to(bias.data, x.shape[:-1] + (w.shape[2],)).copy()
    for j in range(K):
        out += xp[..., j * dilation: j * dilation + T, :] @ w[j]

    def vjp(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w)
        g2 = g.reshape(-1, g.shape[-1])
        for j in range(K):
            sl = xp[..., j * dilation: j * dilation + T, :]
            gw[j] = sl.reshape(-1, sl.shape[-1]).T @ g2
            gxp[..., j * dilation: j * dilation + T, :] += g @ w[j].T
        gb = g2.sum(axis=0)
        return gxp[..., pad:, :], gw, gb

    return _node(out, (x, weight, bias), vjp, "conv1d_causal")


# -- reverse pass ------------------------------------------------------------
def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``grad`` of every reachable leaf."""
    if root.size != 1:
        raise ContractViolation(f"backward: root must be scalar, got shape {root.shape}")
    if not root.requires_grad:
        return
    nodes: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        t = stack.pop()
        if t.id in nodes:
            continue
        nodes[t.id] = t
        stack.extend(p for p in t._parents if p.requires_grad)

    grads: dict[int, np.ndarray] = {root.id: np.ones(root.shape)}
    for nid in sorted(nodes, reverse=True):
        t = nodes[nid]
        g = grads.pop(nid, None)
        if g is None:
            continue
        if t._vjp is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for p, pg in zip(t._parents, t._vjp(g)):
            if pg is None or not p.requires_grad:
                continue
            grads[p.id] = grads[p.id] + pg if p.id in grads else pg


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor | np.ndarray, eps: float = 1e-5) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|)."""
    if eps <= 0:
        raise ConfigurationError("finite_diff_check: eps must be positive")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    leaf = Tensor(base.copy(), requires_grad=True)
    out = f(leaf)
    if not np.all(np.isfinite(out.data)):
        raise NumericError("finite_diff_check: f is not finite at x")
    backward(out)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(base)

    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    with no_grad():
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            fp = f(Tensor(base)).item()
            flat[k] = orig - eps
            fm = f(Tensor(base)).item()
            flat[k] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError("finite_diff_check: f is not finite near x")
            numeric.reshape(-1)[k] = (fp - fm) / (2.0 * eps)
    if base.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))


sum = tsum  # noqa: A001 - mirrors numpy naming for ``tn.sum``
