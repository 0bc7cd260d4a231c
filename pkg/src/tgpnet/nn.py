"""Layers built on :mod:`tgpnet.tensor`.

Parameters are registered by attribute assignment, in order, so
``named_parameters`` yields a stable ``stage.block.layer.tensor`` naming that
the checkpoint format relies on. Initial values come from
:meth:`Module.reset_parameters`, which seeds one generator per parameter from
``(seed, name)``; two models that share parameter names therefore share
initial values regardless of what other parameters they hold.
"""
from __future__ import annotations

import zlib
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Parameter, ShapeError, Tensor

__all__ = [
    "Module", "Sequential", "Conv2d", "Linear", "LayerNorm", "conv2d", "linear",
    "layer_norm_channels", "relu", "gelu", "softmax", "global_avg_pool",
    "pixel_shuffle", "pixel_unshuffle", "init_rng",
]

conv2d = T.conv2d
layer_norm_channels = T.layer_norm_channels
relu = T.relu
gelu = T.gelu
softmax = T.softmax
pixel_shuffle = T.pixel_shuffle
pixel_unshuffle = T.pixel_unshuffle


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Row-wise ``weight @ x + bias`` for ``x`` of shape (n, d_in)."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input length {x.shape[-1]} != weight d_in {weight.shape[1]}")
    y = T.matmul(x, T.transpose(weight, (1, 0)))
    return y if bias is None else y + bias


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean, (n, c, h, w) -> (n, c, 1, 1)."""
    return T.mean(x, axis=(2, 3), keepdims=True)


def init_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: expected {p.shape}, got {arr.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def reset_parameters(self, seed: int) -> None:
        for name, p in self.named_parameters():
            rng = init_rng(seed, name)
            if p.init == "fan_in":
                bound = 1.0 / np.sqrt(p.fan_in)
                p.data = rng.uniform(-bound, bound, size=p.shape).astype(p.dtype)
            elif p.init == "ones":
                p.data = np.ones(p.shape, dtype=p.dtype)
            elif p.init == "zeros":
                p.data = np.zeros(p.shape, dtype=p.dtype)
            elif p.init == "prompt":
                p.data = rng.uniform(-0.5, 0.5, size=p.shape).astype(p.dtype)
            else:
                raise ValueError(f"unknown init rule {p.init!r} for {name}")

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        for i, layer in enumerate(layers):
            setattr(self, str(i), layer)

    def __iter__(self):
        return iter(self._children.values())

    def __len__(self):
        return len(self._children)

    def __call__(self, x):
        for layer in self:
            x = layer(x)
        return x


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, stride: int = 1,
                 padding: int | None = None, groups: int = 1, bias: bool = True):
        super().__init__()
        if c_in % groups or c_out % groups:
            raise ShapeError(f"channels ({c_in}, {c_out}) not divisible by groups={groups}")
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.stride, self.groups = stride, groups
        self.padding = k // 2 if padding is None else padding
        fan_in = (c_in // groups) * k * k
        self.weight = Parameter((c_out, c_in // groups, k, k), fan_in=fan_in)
        if bias:
            self.bias = Parameter((c_out,), fan_in=fan_in, decay=False)
        else:
            self.bias = None

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, bias: bool = True):
        super().__init__()
        self.weight = Parameter((d_out, d_in), fan_in=d_in)
        self.bias = Parameter((d_out,), fan_in=d_in, decay=False) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class LayerNorm(Module):
    """Bias-free channel LayerNorm with learnable scale."""

    def __init__(self, c: int, eps: float = 1e-6):
        super().__init__()
        self.eps = eps
        self.weight = Parameter((c,), init="ones", decay=False)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm_channels(x, self.weight, self.eps)
