"""Layer kinds: shape inference, seeded parameter init and forward calls.

A layer is built once against a per-sample input shape, registering its
parameters in a :class:`ParamStore` under ``<name>.w`` / ``<name>.b``. Calling
it with a :class:`Graph` reads those parameters from the graph, so the same
layer object can be applied any number of times with shared weights.
"""

from __future__ import annotations

import numpy as np

from . import engine as E
from .engine import Graph, ParamStore, ShapeMismatch, Tensor


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=np.float64) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    name: str = ""
    param_names: tuple[str, ...] = ()

    def build(self, in_shape: tuple[int, ...], store: ParamStore, rng: np.random.Generator,
              dtype=np.float64) -> tuple[int, ...]:
        """Register parameters; return the per-sample output shape."""
        return self.out_shape(in_shape)

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return tuple(in_shape)

    def __call__(self, g: Graph | None, x: Tensor) -> Tensor:
        raise NotImplementedError

    def _p(self, g: Graph | None, store: ParamStore | None, key: str) -> Tensor:
        full = f"{self.name}.{key}"
        if g is not None:
            return g.param(full)
        return Tensor(store[full])


class Conv2D(Layer):
    def __init__(self, out_channels: int, kernel: int = 3, stride: int = 1, bias: bool = True, name: str = "conv"):
        if kernel % 2 == 0:
            raise ValueError("kernel size must be odd for size-preserving zero padding")
        self.out_channels, self.kernel, self.stride, self.bias, self.name = out_channels, kernel, stride, bias, name

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeMismatch(f"conv2d expects (C, H, W) samples, got {in_shape}")
        C, H, W = in_shape
        return (self.out_channels, -(-H // self.stride), -(-W // self.stride))

    def build(self, in_shape, store, rng, dtype=np.float64):
        out = self.out_shape(in_shape)
        C = in_shape[0]
        fan_in = C * self.kernel ** 2
        store[f"{self.name}.w"] = he_uniform(rng, (self.out_channels, C, self.kernel, self.kernel), fan_in, dtype)
        if self.bias:
            store[f"{self.name}.b"] = np.zeros(self.out_channels, dtype=dtype)
        return out

    def param_count(self, in_channels: int) -> int:
        return self.kernel ** 2 * in_channels * self.out_channels + (self.out_channels if self.bias else 0)

    def __call__(self, g, x, store=None):
        w = self._p(g, store, "w")
        b = self._p(g, store, "b") if self.bias else None
        return E.conv2d(x, w, b, self.stride)


class Dense(Layer):
    def __init__(self, out_features: int, bias: bool = True, name: str = "dense"):
        self.out_features, self.bias, self.name = out_features, bias, name

    def out_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ShapeMismatch(f"dense expects flat samples, got {in_shape}")
        return (self.out_features,)

    def build(self, in_shape, store, rng, dtype=np.float64):
        out = self.out_shape(in_shape)
        store[f"{self.name}.w"] = he_uniform(rng, (in_shape[0], self.out_features), in_shape[0], dtype)
        if self.bias:
            store[f"{self.name}.b"] = np.zeros(self.out_features, dtype=dtype)
        return out

    def __call__(self, g, x, store=None):
        w = self._p(g, store, "w")
        b = self._p(g, store, "b") if self.bias else None
        return E.dense(x, w, b)


class ReLU(Layer):
    def __init__(self, name: str = "relu"):
        self.name = name

    def __call__(self, g, x, store=None):
        return E.relu(x)


class Sigmoid(Layer):
    def __init__(self, name: str = "sigmoid"):
        self.name = name

    def __call__(self, g, x, store=None):
        return E.sigmoid(x)


class Softmax(Layer):
    def __init__(self, axis: int = 1, name: str = "softmax"):
        self.axis, self.name = axis, name

    def __call__(self, g, x, store=None):
        return E.softmax(x, self.axis)


class Flatten(Layer):
    def __init__(self, name: str = "flatten"):
        self.name = name

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def __call__(self, g, x, store=None):
        return E.flatten(x)


class _Pool(Layer):
    def __init__(self, k: int = 2, stride: int | None = None, name: str = "pool"):
        self.k, self.stride, self.name = k, stride or k, name

    def out_shape(self, in_shape):
        C, H, W = in_shape
        if H < self.k or W < self.k:
            raise ShapeMismatch(f"pool window {self.k} larger than input {in_shape}")
        return (C, (H - self.k) // self.stride + 1, (W - self.k) // self.stride + 1)


class MaxPool(_Pool):
    def __call__(self, g, x, store=None):
        return E.maxpool(x, self.k, self.stride)


class AvgPool(_Pool):
    def __call__(self, g, x, store=None):
        return E.avgpool(x, self.k, self.stride)


class Upsample(Layer):
    def __init__(self, factor: int = 2, name: str = "upsample"):
        self.factor, self.name = factor, name

    def out_shape(self, in_shape):
        C, H, W = in_shape
        return (C, H * self.factor, W * self.factor)

    def __call__(self, g, x, store=None):
        return E.upsample(x, self.factor)


class Identity(Layer):
    def __init__(self, name: str = "identity"):
        self.name = name

    def __call__(self, g, x, store=None):
        return x


class Sequential(Layer):
    def __init__(self, layers: list[Layer], name: str = "seq"):
        self.layers, self.name = list(layers), name

    def out_shape(self, in_shape):
        for layer in self.layers:
            in_shape = layer.out_shape(in_shape)
        return in_shape

    def build(self, in_shape, store, rng, dtype=np.float64):
        for layer in self.layers:
            in_shape = layer.build(in_shape, store, rng, dtype)
        return in_shape

    def __call__(self, g, x, store=None):
        for layer in self.layers:
            x = layer(g, x, store)
        return x


def forward(graph: Graph, layer: Layer, x) -> Tensor:
    """Apply ``layer`` to ``x`` on ``graph``, validating the input shape first."""
    x = x if isinstance(x, Tensor) else graph.input(x)
    layer.out_shape(x.shape[1:])
    return layer(graph, x)
