"""Lift, Drop, Merge, the slice operator T_s and the wrapped layer f'.

A :class:`StackedTensor` carries a (B, |G|*c, H, W) tensor whose channel axis
is split into |G| contiguous slices of c channels; slice i belongs to group
element ``g_i``. ``t_apply(x, s)`` reorders the slices so position i reads
slice m(g_i s) and then applies the spatial action of s. Every operation here
commutes with ``t_apply``, so any composition Drop . (wrapped layers, merges,
pools) . Lift is equivariant over the group.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as E
from .engine import Graph, ShapeMismatch, Tensor
from .groups import FiniteGroup, GroupElement, SpatialAction
from .nn import Layer


class GroupMismatch(ValueError):
    pass


class GroupArityUnsupported(ValueError):
    pass


class PartitionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class StackedTensor:
    tensor: Tensor
    group: FiniteGroup

    def __post_init__(self):
        if not isinstance(self.tensor, Tensor):
            object.__setattr__(self, "tensor", Tensor(self.tensor))
        if self.tensor.ndim < 2 or self.tensor.shape[1] % self.group.order:
            raise E.IndivisibleChannels(
                f"{self.tensor.shape[1] if self.tensor.ndim > 1 else 0} channels not divisible by |G|={self.group.order}"
            )

    @property
    def slice_channels(self) -> int:
        return self.tensor.shape[1] // self.group.order

    @property
    def shape(self):
        return self.tensor.shape

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    def slices(self) -> list[Tensor]:
        return E.channel_slice(self.tensor, self.group.order)


def _check_same_group(*xs: StackedTensor):
    g = xs[0].group
    for x in xs[1:]:
        if x.group is not g:
            raise GroupMismatch("stacked tensors belong to different group objects")


def _element(group: FiniteGroup, s: GroupElement | int) -> GroupElement:
    if isinstance(s, GroupElement):
        if s.index >= group.order or group.elements[s.index] != s:
            raise GroupMismatch(f"{s} is not an element of {group!r}")
        return s
    return group.elements[int(s)]


def slice_gather_index(group: FiniteGroup, s: GroupElement | int, slice_channels: int) -> np.ndarray:
    perm = group.slice_permutation(_element(group, s))
    return (perm[:, None] * slice_channels + np.arange(slice_channels)[None, :]).ravel()


def t_apply(x: StackedTensor, s: GroupElement | int) -> StackedTensor:
    """T_s = s . R_s: permute slices by R_s, then act spatially with s."""
    s = _element(x.group, s)
    if s.index == 0:
        return x
    out = E.take(x.tensor, slice_gather_index(x.group, s, x.slice_channels), axis=1)
    out = E.apply_spatial_action(out, s.action)
    return StackedTensor(out, x.group)


def lift(x, group: FiniteGroup) -> StackedTensor:
    """Stack |G| copies of ``x`` along the channel axis."""
    x = E.as_tensor(x)
    if group.order == 1:
        return StackedTensor(x, group)
    return StackedTensor(E.concat([x] * group.order, axis=1), group)


def drop_sum(x: StackedTensor) -> Tensor:
    if x.group.order == 1:
        return x.tensor
    return E.add_n(x.slices())


def drop_identity(x: StackedTensor) -> Tensor:
    return x.tensor


def merge(a: StackedTensor, b: StackedTensor) -> StackedTensor:
    """Zip two stacked tensors slice by slice: [A1; B1; A2; B2; ...]."""
    _check_same_group(a, b)
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeMismatch(f"merge: shapes {a.shape} and {b.shape} differ outside the channel axis")
    if b.slice_channels == 0:
        return a
    if a.slice_channels == 0:
        return b
    parts = []
    for sa, sb in zip(a.slices(), b.slices()):
        parts += [sa, sb]
    return StackedTensor(E.concat(parts, axis=1), a.group)


class WrappedLayer:
    """f'(X) = [g_1^-1 f(T_{g_1} X); ...; g_n^-1 f(T_{g_n} X)] with one shared parameter set.

    The |G| branch inputs are concatenated along the batch axis so the inner
    layer runs once; per-sample layers make this identical to |G| separate
    calls, and the weight gradient is the sum over branches.
    """

    def __init__(self, inner: Layer, group: FiniteGroup):
        self.inner = inner
        self.group = group

    @property
    def name(self):
        return self.inner.name

    def out_shape(self, in_shape):
        c, *rest = self.inner.out_shape(in_shape)
        return (c * self.group.order, *rest)

    def build(self, in_shape, store, rng, dtype=np.float64):
        if in_shape[0] % self.group.order:
            raise E.IndivisibleChannels(f"wrapped layer input has {in_shape[0]} channels, |G|={self.group.order}")
        c, *rest = self.inner.build(in_shape, store, rng, dtype)
        return (c * self.group.order, *rest)

    def __call__(self, g: Graph | None, x: StackedTensor, store=None) -> StackedTensor:
        if x.group is not self.group:
            raise GroupMismatch("input stacked over a different group than the wrapped layer")
        self.inner.out_shape(x.shape[1:])
        n = self.group.order
        if n == 1:
            return StackedTensor(self.inner(g, x.tensor, store), self.group)
        branches = [t_apply(x, e).tensor for e in self.group]
        y = self.inner(g, E.concat(branches, axis=0), store)
        outs = []
        for e, yi in zip(self.group, E.split(y, n, axis=0)):
            inv = self.group.inverse(e).action
            outs.append(yi if inv == SpatialAction() else E.apply_spatial_action(yi, inv))
        return StackedTensor(E.channel_stack(outs), self.group)


def wrap_forward(layer: WrappedLayer, x: StackedTensor, graph: Graph | None = None, store=None) -> StackedTensor:
    return layer(graph, x, store)


class Passthrough:
    """Apply a pointwise/pooling layer directly to the stacked tensor.

    Valid for layers that commute with every spatial action of the group and
    act on channels independently (max/avg pooling with kernel == stride
    dividing the spatial size, nearest upsampling, ReLU).
    """

    def __init__(self, inner: Layer, group: FiniteGroup):
        self.inner = inner
        self.group = group

    @property
    def name(self):
        return self.inner.name

    def out_shape(self, in_shape):
        return self.inner.out_shape(in_shape)

    def build(self, in_shape, store, rng, dtype=np.float64):
        k = getattr(self.inner, "k", None)
        if k is not None:
            if self.inner.stride != k or in_shape[1] % k or in_shape[2] % k:
                raise ShapeMismatch(
                    f"pool passthrough needs kernel == stride dividing the input, got k={k} "
                    f"stride={self.inner.stride} on {in_shape}"
                )
        return self.inner.build(in_shape, store, rng, dtype)

    def __call__(self, g, x: StackedTensor, store=None) -> StackedTensor:
        return StackedTensor(self.inner(g, x.tensor, store), x.group)


@dataclass(frozen=True)
class MoveDropSpec:
    """Channel ranges [start, stop) of the S0, X0, S0', X1 blocks.

    S0/S0' hold moves that are their own mirror image, X0/X1 the moves whose
    mirror images are each other. The first slice must be [S0; X0] and the
    second [S0'; X1].
    """

    s0: tuple[int, int]
    x0: tuple[int, int]
    s0p: tuple[int, int]
    x1: tuple[int, int]

    @classmethod
    def from_sizes(cls, n_sym: int, n_asym: int) -> "MoveDropSpec":
        a = n_sym + n_asym
        return cls((0, n_sym), (n_sym, a), (a, a + n_sym), (a + n_sym, 2 * a))

    @property
    def channels(self) -> int:
        return self.x1[1]

    def validate(self, channels: int | None = None):
        blocks = [self.s0, self.x0, self.s0p, self.x1]
        if blocks[0][0] != 0 or any(b[0] > b[1] for b in blocks):
            raise PartitionMismatch(f"blocks must be ordered, non-empty ranges from 0: {blocks}")
        if any(blocks[i][1] != blocks[i + 1][0] for i in range(3)):
            raise PartitionMismatch(f"blocks must be contiguous and disjoint: {blocks}")
        n_s, n_sp = self.s0[1] - self.s0[0], self.s0p[1] - self.s0p[0]
        if n_s != n_sp:
            raise PartitionMismatch(f"|S0|={n_s} differs from |S0'|={n_sp}")
        if self.x0[1] - self.x0[0] != self.x1[1] - self.x1[0]:
            raise PartitionMismatch("X0 and X1 must have equal size so the two slices match")
        if channels is not None and channels != self.channels:
            raise PartitionMismatch(f"spec covers {self.channels} channels, tensor has {channels}")

    def output_action(self, spatial: str = "flip-h") -> SpatialAction:
        """Action on the Drop' output: reflect and swap the X0/X1 blocks."""
        n_s = self.s0[1] - self.s0[0]
        n_x = self.x0[1] - self.x0[0]
        perm = list(range(n_s)) + [n_s + n_x + i for i in range(n_x)] + [n_s + i for i in range(n_x)]
        return SpatialAction(spatial, tuple(perm))


def move_drop(x: StackedTensor, spec: MoveDropSpec) -> Tensor:
    """[S0; X0; S0'; X1] -> [(S0 + S0')/2; X0; X1]."""
    if x.group.order != 2:
        raise GroupArityUnsupported(f"move_drop is defined for |G| = 2, got {x.group.order}")
    spec.validate(x.shape[1])
    t = x.tensor
    s = E.scale(E.add(E.slice_axis(t, *spec.s0), E.slice_axis(t, *spec.s0p)), 0.5)
    return E.concat([s, E.slice_axis(t, *spec.x0), E.slice_axis(t, *spec.x1)], axis=1)
