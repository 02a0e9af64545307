"""Dense tensors with tape-based reverse-mode differentiation.

Operations run eagerly on numpy arrays. When any input belongs to a
:class:`Graph`, the result is recorded on that graph together with a closure
mapping the output gradient to input gradients; :meth:`Graph.backward` replays
the tape in reverse and accumulates gradients additively, so tensors consumed
by several branches (skip connections, weight sharing) get the sum.

Image tensors are laid out (batch, channels, height, width).
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .groups import SpatialAction


class ShapeMismatch(ValueError):
    pass


class IndivisibleChannels(ValueError):
    pass


class NoForwardRecorded(RuntimeError):
    pass


_ids = itertools.count()


class Tensor:
    __slots__ = ("data", "graph", "name", "id")

    def __init__(self, data, graph: "Graph | None" = None, name: str | None = None):
        self.data = np.asarray(data)
        self.graph = graph
        self.name = name
        self.id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f", param={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, c: float):
        return scale(self, c)

    __rmul__ = __mul__


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class ParamStore(dict):
    """Ordered name -> array mapping of trainable parameters."""

    def count(self) -> int:
        return int(sum(v.size for v in self.values()))

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self.items()})


class Graph:
    """Tape of recorded operations for one forward/backward pass."""

    def __init__(self, params: ParamStore | None = None):
        self.params = params if params is not None else ParamStore()
        self.tape: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def input(self, x) -> Tensor:
        return Tensor(np.asarray(x), self)

    def param(self, name: str) -> Tensor:
        return Tensor(self.params[name], self, name)

    def record(self, out: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
        t = Tensor(out, self)
        self.tape.append((t, tuple(parents), backward))
        return t

    def backward(self, output: Tensor, grad=None, wrt: Sequence[Tensor] = ()) -> dict:
        """Backpropagate from ``output`` and return parameter gradients by name.

        Gradients of any tensors in ``wrt`` are returned under the tensor
        object itself as key. The tape is cleared afterwards.
        """
        if not self.tape:
            raise NoForwardRecorded("backward called before any operation was recorded")
        if grad is None:
            if output.data.size != 1:
                raise ShapeMismatch(f"implicit gradient needs a scalar output, got shape {output.shape}")
            grad = np.ones_like(output.data)
        keep = {t.id for t in wrt}
        grads = {output.id: np.asarray(grad, dtype=output.data.dtype)}
        for out, parents, fn in reversed(self.tape):
            g = grads.get(out.id) if out.id in keep else grads.pop(out.id, None)
            if g is None:
                continue
            for p, pg in zip(parents, fn(g)):
                if pg is None or p.graph is not self:
                    continue
                if p.id in grads:
                    grads[p.id] = grads[p.id] + pg
                else:
                    grads[p.id] = pg
        result: dict = {}
        seen_param = {}
        for t in self._leaves():
            if t.name is not None and t.id in grads:
                if t.name in seen_param:
                    result[t.name] = result[t.name] + grads[t.id]
                else:
                    result[t.name] = grads[t.id]
                    seen_param[t.name] = True
        for t in wrt:
            result[t] = grads.get(t.id, np.zeros_like(t.data))
        self.tape.clear()
        return result

    def _leaves(self):
        # parameter tensors appear only as parents on the tape
        seen = set()
        for _, parents, _ in self.tape:
            for p in parents:
                if p.name is not None and p.id not in seen:
                    seen.add(p.id)
                    yield p


def _graph_of(*xs) -> Graph | None:
    for x in xs:
        if isinstance(x, Tensor) and x.graph is not None:
            return x.graph
    return None


def _result(out, parents, backward) -> Tensor:
    g = _graph_of(*parents)
    if g is None:
        return Tensor(out)
    return g.record(out, parents, backward)


# elementwise and structural ops --------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"add: shapes {a.shape} and {b.shape} differ")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def add_n(xs: Sequence) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    for x in xs[1:]:
        if x.shape != xs[0].shape:
            raise ShapeMismatch(f"add_n: shapes {xs[0].shape} and {x.shape} differ")
    out = xs[0].data.copy()
    for x in xs[1:]:
        out = out + x.data
    return _result(out, xs, lambda g: [g] * len(xs))


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    return _result(x.data * c, (x,), lambda g: (g * c,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), back)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def flatten(x) -> Tensor:
    x = as_tensor(x)
    return reshape(x, (x.shape[0], -1))


def take(x, index, axis: int) -> Tensor:
    """Gather entries of ``x`` along ``axis``; repeated or missing indices allowed."""
    x = as_tensor(x)
    index = np.asarray(index)
    shape = x.shape
    n = shape[axis]
    if index.ndim == 1 and len(index) == n and (np.bincount(index, minlength=n) == 1).all():
        inverse = np.argsort(index)
        return _result(np.take(x.data, index, axis=axis), (x,), lambda g: (np.take(g, inverse, axis=axis),))

    def back(g):
        out = np.zeros(shape, dtype=g.dtype)
        moved = np.moveaxis(out, axis, 0)
        np.add.at(moved, index, np.moveaxis(g, axis, 0))
        return (out,)

    return _result(np.take(x.data, index, axis=axis), (x,), back)


def concat(xs: Sequence, axis: int = 1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    for x in xs[1:]:
        a, b = list(x.shape), list(xs[0].shape)
        a[axis] = b[axis] = 0
        if a != b:
            raise ShapeMismatch(f"concat along axis {axis}: shapes {xs[0].shape} and {x.shape}")
    sizes = [x.shape[axis] for x in xs]
    bounds = np.cumsum(sizes)[:-1]
    return _result(np.concatenate([x.data for x in xs], axis=axis), xs,
                   lambda g: np.split(g, bounds, axis=axis))


def split(x, n: int, axis: int = 1) -> list[Tensor]:
    x = as_tensor(x)
    if x.shape[axis] % n:
        raise IndivisibleChannels(f"cannot split {x.shape[axis]} entries of axis {axis} into {n}")
    step = x.shape[axis] // n
    return [slice_axis(x, i * step, (i + 1) * step, axis) for i in range(n)]


def slice_axis(x, start: int, stop: int, axis: int = 1) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)

    def back(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[sl] = g
        return (out,)

    return _result(x.data[sl], (x,), back)


def channel_slice(x, n_slices: int) -> list[Tensor]:
    x = as_tensor(x)
    if x.shape[1] % n_slices:
        raise IndivisibleChannels(f"{x.shape[1]} channels cannot be split into {n_slices} slices")
    return split(x, n_slices, axis=1)


def channel_stack(xs: Sequence) -> Tensor:
    return concat(xs, axis=1)


def apply_spatial_action(x, a: SpatialAction) -> Tensor:
    """Apply a square symmetry (and channel permutation) to the (C, H, W) axes."""
    x = as_tensor(x)
    inv = a.inverse()
    return _result(np.ascontiguousarray(a.apply(x.data)), (x,), lambda g: (np.ascontiguousarray(inv.apply(g)),))


# layers with parameters ------------------------------------------------------


def conv2d(x, w, b=None, stride: int = 1) -> Tensor:
    """Zero-padded ('same' for stride 1) 2-d convolution; ``w`` is (F, C, k, k)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    F, C, k, _ = w.shape
    B, _, H, W = x.shape
    p = k // 2
    Ho, Wo = -(-H // stride), -(-W // stride)
    # columns laid out (C, k, k, B, Ho, Wo) so each copy below is a strided image block
    xt = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))).transpose(1, 0, 2, 3)
    cols = np.empty((C, k, k, B, Ho, Wo), dtype=x.data.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xt[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride]
    cols = cols.reshape(C * k * k, B * Ho * Wo)
    wm = w.data.reshape(F, -1)
    out = wm @ cols
    if b is not None:
        b = as_tensor(b)
        out += b.data[:, None]
    out = np.ascontiguousarray(out.reshape(F, B, Ho, Wo).transpose(1, 0, 2, 3))

    def back(g):
        gm = g.transpose(1, 0, 2, 3).reshape(F, -1)
        gw = (gm @ cols.T).reshape(w.shape)
        gc = (wm.T @ gm).reshape(C, k, k, B, Ho, Wo)
        gxp = np.zeros((C, B, H + 2 * p, W + 2 * p), dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += gc[:, i, j]
        grads = [gxp[:, :, p:p + H, p:p + W].transpose(1, 0, 2, 3), gw]
        if b is not None:
            grads.append(gm.sum(axis=1))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, back)


def dense(x, w, b=None) -> Tensor:
    """``x @ w + b`` with ``w`` shaped (in_features, out_features)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"dense: input {x.shape} incompatible with weight {w.shape}")
    out = x.data @ w.data
    if b is not None:
        b = as_tensor(b)
        out = out + b.data

    def back(g):
        grads = [g @ w.data.T, x.data.T @ g]
        if b is not None:
            grads.append(g.sum(axis=0))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, back)


def _pool_windows(x: np.ndarray, k: int, stride: int):
    return sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]


def maxpool(x, k: int = 2, stride: int | None = None) -> Tensor:
    x = as_tensor(x)
    stride = stride or k
    win = _pool_windows(x.data, k, stride)
    B, C, Ho, Wo = win.shape[:4]
    flat = win.reshape(B, C, Ho, Wo, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    shape = x.shape

    def back(g):
        gx = np.zeros(shape, dtype=g.dtype)
        di, dj = np.divmod(arg, k)
        bi, ci, hi, wi = np.indices((B, C, Ho, Wo))
        np.add.at(gx, (bi, ci, hi * stride + di, wi * stride + dj), g)
        return (gx,)

    return _result(out, (x,), back)


def avgpool(x, k: int = 2, stride: int | None = None) -> Tensor:
    x = as_tensor(x)
    stride = stride or k
    win = _pool_windows(x.data, k, stride)
    Ho, Wo = win.shape[2:4]
    out = win.mean(axis=(-2, -1))
    shape = x.shape

    def back(g):
        gx = np.zeros(shape, dtype=g.dtype)
        share = g / (k * k)
        for i in range(k):
            for j in range(k):
                gx[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += share
        return (gx,)

    return _result(out, (x,), back)


def upsample(x, factor: int = 2) -> Tensor:
    x = as_tensor(x)
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)
    B, C, H, W = x.shape

    def back(g):
        return (g.reshape(B, C, H, factor, W, factor).sum(axis=(3, 5)),)

    return _result(out, (x,), back)


# losses ------------------------------------------------------------------------


def cross_entropy(logits, labels) -> Tensor:
    """Mean categorical cross-entropy of integer ``labels`` under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()

    def back(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (g * p / n,)

    return _result(np.asarray(loss), (logits,), back)


def binary_cross_entropy(logits, targets) -> Tensor:
    """Mean per-element binary cross-entropy of sigmoid(logits) against 0/1 targets."""
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=logits.data.dtype)
    x = logits.data
    loss = (np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))).mean()

    def back(g):
        p = 0.5 * (1.0 + np.tanh(0.5 * x))
        return (g * (p - t) / x.size,)

    return _result(np.asarray(loss), (logits,), back)


def squared_error(pred, target) -> Tensor:
    """Half the summed squared error."""
    pred = as_tensor(pred)
    diff = pred.data - np.asarray(target)
    return _result(np.asarray(0.5 * (diff ** 2).sum()), (pred,), lambda g: (g * diff,))
