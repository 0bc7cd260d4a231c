"""Numpy-backed tensors with tape-based reverse-mode differentiation.

A :class:`Tensor` wraps an ``np.ndarray``. Every differentiable op whose
inputs require gradients appends one record to the thread's active
:class:`Tape`; :func:`backward` replays the tape in reverse, accumulating
(``+=``) into the ``grad`` of every leaf that requires it, then clears it.

Images are rank-4 ``(n, c, h, w)``; attention and linear layers operate on
reshaped views of the same buffers, so ops accept any rank where that is
natural.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Sequence

import numpy as np

from . import kernels

__all__ = [
    "Tensor", "Parameter", "Tape", "ShapeError", "NonFiniteError",
    "tensor", "backward", "no_grad", "is_grad_enabled", "get_default_dtype",
    "set_default_dtype", "default_dtype", "add", "sub", "mul", "div", "matmul",
    "reshape", "transpose", "sum", "mean", "abs", "relu", "gelu", "softmax",
    "concat", "narrow", "take", "conv2d", "layer_norm_channels", "l2_normalize",
    "pixel_shuffle", "pixel_unshuffle", "validate_finite",
]


class ShapeError(ValueError):
    """Raised when operand shapes violate an op's contract."""


class NonFiniteError(FloatingPointError):
    """Raised by :func:`validate_finite` when NaN or Inf is found."""


_state = threading.local()


def _get(name, default):
    return getattr(_state, name, default)


_DEFAULT_DTYPE = np.float32


def get_default_dtype():
    return _get("dtype", _DEFAULT_DTYPE)


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _state.dtype = dtype


@contextlib.contextmanager
def default_dtype(dtype):
    prev = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = prev


def is_grad_enabled() -> bool:
    return _get("grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tape:
    """Ordered record of differentiable ops for one thread.

    Use as a context manager to make a fresh tape active; otherwise each
    thread has an implicit default tape.
    """

    def __init__(self):
        self.records: list[tuple] = []

    def __len__(self):
        return len(self.records)

    def clear(self) -> None:
        self.records.clear()

    def __enter__(self):
        stack = _get("tapes", None)
        if stack is None:
            stack = _state.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.tapes.pop()
        return False


def current_tape() -> Tape:
    stack = _get("tapes", None)
    if stack:
        return stack[-1]
    tape = _get("default_tape", None)
    if tape is None:
        tape = _state.default_tape = Tape()
    return tape


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_leaf", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype if dtype is not None else
                         (data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f"
                          else get_default_dtype()))
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._leaf = True

    shape = property(lambda self: self.data.shape)
    ndim = property(lambda self: self.data.ndim)
    dtype = property(lambda self: self.data.dtype)
    size = property(lambda self: self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Trainable leaf tensor.

    ``init`` names the initialization rule applied by
    :meth:`tgpnet.nn.Module.reset_parameters`; ``decay`` marks whether AdamW
    weight decay applies.
    """

    __slots__ = ("init", "fan_in", "decay")

    def __init__(self, shape, init: str = "fan_in", fan_in: int | None = None,
                 decay: bool = True, dtype=None):
        super().__init__(np.zeros(shape, dtype=dtype or get_default_dtype()), requires_grad=True)
        self.init = init
        self.fan_in = fan_in
        self.decay = decay


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _record(out_data, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap ``out_data`` and, when needed, append its backward rule to the tape."""
    out = Tensor(out_data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._leaf = False
        current_tape().records.append((out, tuple(parents), backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """Back-propagate from a single-element ``loss`` and clear the tape."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = current_tape()
    if not tape.records:
        raise RuntimeError("backward called on an empty tape")
    grads = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    if loss._leaf and loss.requires_grad:
        _accumulate(loss, grads.pop(id(loss)))
    try:
        for out, parents, fn in reversed(tape.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for p, gp in zip(parents, fn(g)):
                if gp is None or not p.requires_grad:
                    continue
                if p._leaf:
                    _accumulate(p, gp)
                else:
                    key = id(p)
                    prev = grads.get(key)
                    grads[key] = gp if prev is None else prev + gp
    finally:
        tape.clear()


def _accumulate(leaf: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=leaf.dtype).reshape(leaf.shape)
    if leaf.grad is None:
        leaf.grad = g.copy()
    else:
        leaf.grad += g


def validate_finite(named: dict | Sequence[tuple[str, Tensor]], what: str = "tensor") -> None:
    items = named.items() if isinstance(named, dict) else named
    for name, t in items:
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values in {what} {name!r}")


# ---------------------------------------------------------------- elementwise

def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    b = _lift(b, a)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    b = _lift(b, a)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    b = _lift(b, a)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                              _unbroadcast(g * ad, bd.shape) if b.requires_grad else None))


def div(a, b) -> Tensor:
    b = _lift(b, a)
    _check_broadcast("div", a, b)
    ad, bd = a.data, b.data
    if np.any(bd == 0):
        raise ZeroDivisionError("div: divisor contains exact zeros")
    out = ad / bd
    return _record(out, (a, b),
                   lambda g: (_unbroadcast(g / bd, ad.shape),
                              _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None))


def abs(x: Tensor) -> Tensor:  # noqa: A001
    xd = x.data
    # sign(0) = 0: the symmetric subgradient
    return _record(np.abs(xd), (x,), lambda g: (g * np.sign(xd),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _record(x.data * mask, (x,), lambda g: (g * mask,))


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximate GELU."""
    xd = x.data
    u = _GELU_C * (xd + 0.044715 * xd ** 3)
    t = np.tanh(u)
    out = 0.5 * xd * (1.0 + t)

    def bwd(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * xd ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du),)

    return _record(out, (x,), bwd)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, with max subtraction."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _record(s, (x,), bwd)


# ---------------------------------------------------------------- structural

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes."""
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _record(ad @ bd, (a, b), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _record(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    src = x.shape

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src),)

    return _record(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bwd)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = x.shape
    count = x.size if axis is None else int(np.prod([src[a] for a in np.atleast_1d(axis)]))

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, src),)

    return _record(np.asarray(x.data.mean(axis=axis, keepdims=keepdims)), (x,), bwd)


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.shape[axis] for t in xs]
    bounds = np.cumsum(sizes)[:-1]
    try:
        out = np.concatenate([t.data for t in xs], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in xs]}") from None
    return _record(out, tuple(xs), lambda g: tuple(np.split(g, bounds, axis=axis)))


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Slice ``length`` entries of ``axis`` starting at ``start``."""
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    src, dt = x.shape, x.dtype

    def bwd(g):
        full = np.zeros(src, dtype=dt)
        full[idx] = g
        return (full,)

    return _record(x.data[idx], (x,), bwd)


def take(x: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather rows of ``x`` along ``axis`` (indices may repeat)."""
    indices = np.asarray(indices, dtype=np.intp)
    src, dt = x.shape, x.dtype

    def bwd(g):
        full = np.zeros(src, dtype=dt)
        np.add.at(full, (slice(None),) * axis + (indices,), g)
        return (full,)

    return _record(np.take(x.data, indices, axis=axis), (x,), bwd)


# ---------------------------------------------------------------- fused image ops

def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """2-D cross-correlation (no kernel flip) with optional bias and groups."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects (n, c, h, w), got {x.shape}")
    n, ci, h, w = x.shape
    co, cig, k, k2 = weight.shape
    if ci % groups or co % groups or cig * groups != ci:
        raise ShapeError(
            f"conv2d: input has {ci} channels, weight {weight.shape} with groups={groups} "
            f"expects {cig * groups}")
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k2) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: non-positive output size ({ho}, {wo}) for input {x.shape}")
    xd = x.data
    wd = weight.data.astype(xd.dtype, copy=False)
    depthwise = groups == ci and cig == 1 and co == ci and stride == 1
    if groups == 1:
        out = kernels.conv2d_forward(xd, wd, stride, padding)
    elif depthwise:
        out = kernels.dwconv_forward(xd, wd, padding)
    else:
        cog = co // groups
        out = np.concatenate([
            kernels.conv2d_forward(np.ascontiguousarray(xd[:, g * cig:(g + 1) * cig]),
                                   wd[g * cog:(g + 1) * cog], stride, padding)
            for g in range(groups)], axis=1)
    if bias is not None:
        out = out + bias.data.reshape(1, co, 1, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bwd(g):
        g = np.ascontiguousarray(g, dtype=xd.dtype)
        if groups == 1:
            gx, gw = kernels.conv2d_backward(xd, wd, g, stride, padding)
        elif depthwise:
            gx, gw = kernels.dwconv_backward(xd, wd, g, padding)
        else:
            cog = co // groups
            parts = [kernels.conv2d_backward(np.ascontiguousarray(xd[:, i * cig:(i + 1) * cig]),
                                             wd[i * cog:(i + 1) * cog],
                                             np.ascontiguousarray(g[:, i * cog:(i + 1) * cog]),
                                             stride, padding) for i in range(groups)]
            gx = np.concatenate([p[0] for p in parts], axis=1)
            gw = np.concatenate([p[1] for p in parts], axis=0)
        grads = (gx if x.requires_grad else None, gw)
        if bias is not None:
            grads += (g.sum(axis=(0, 2, 3)),)
        return grads

    return _record(out, parents, bwd)


def layer_norm_channels(x: Tensor, scale: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize each (n, h, w) channel vector to zero mean, unit variance, times ``scale``."""
    xd = x.data
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    s = scale.data.reshape(1, -1, 1, 1)

    def bwd(g):
        gs = (g * xhat).sum(axis=(0, 2, 3)).reshape(scale.shape)
        gh = g * s
        gx = rstd * (gh - gh.mean(axis=1, keepdims=True)
                     - xhat * (gh * xhat).mean(axis=1, keepdims=True))
        return gx, gs

    return _record(xhat * s, (x, scale), bwd)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """x / sqrt(sum(x^2) + eps) along ``axis``."""
    xd = x.data
    norm = np.sqrt((xd * xd).sum(axis=axis, keepdims=True) + eps)
    y = xd / norm

    def bwd(g):
        return ((g - y * (g * y).sum(axis=axis, keepdims=True)) / norm,)

    return _record(y, (x,), bwd)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """(n, c, h, w) -> (n, c*r*r, h/r, w/r); tile offset (i, j) goes to channel c0*r*r + i*r + j."""
    n, c, h, w = x.shape
    if h % r or w % r:
        raise ShapeError(f"pixel_unshuffle: spatial dims ({h}, {w}) not divisible by {r}")
    out = x.data.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4)

    def bwd(g):
        return (g.reshape(n, c, r, r, h // r, w // r).transpose(0, 1, 4, 2, 5, 3)
                .reshape(n, c, h, w),)

    return _record(out.reshape(n, c * r * r, h // r, w // r), (x,), bwd)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Exact inverse of :func:`pixel_unshuffle`."""
    n, c, h, w = x.shape
    if c % (r * r):
        raise ShapeError(f"pixel_shuffle: {c} channels not divisible by {r * r}")
    co = c // (r * r)
    out = x.data.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3)

    def bwd(g):
        return (g.reshape(n, co, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c, h, w),)

    return _record(out.reshape(n, co, h * r, w * r), (x,), bwd)
