"""Finite groups acting on (..., channels, height, width) arrays.

A group is generated from a handful of spatial actions (square symmetries,
optionally combined with a channel permutation) by breadth-first closure.
Elements are indexed in discovery order with the identity at index 0; this
index is the slice position used by the slice permutation ``R_s``.
"""

from __future__ import annotations

import json
import os
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

SPATIAL_KINDS = (
    "identity",
    "rot90",
    "rot180",
    "rot270",
    "flip-h",
    "flip-v",
    "transpose",
    "anti-transpose",
)
_SQUARE_ONLY = {"rot90", "rot270", "transpose", "anti-transpose"}


class GroupError(Exception):
    pass


class ClosureExceeded(GroupError):
    pass


class NonInvertibleGenerator(GroupError):
    pass


class NonSquareSpatial(ValueError):
    pass


def _apply_kind(kind: str, x: np.ndarray) -> np.ndarray:
    if kind in _SQUARE_ONLY and x.shape[-1] != x.shape[-2]:
        raise NonSquareSpatial(f"{kind} needs square spatial dims, got {x.shape[-2:]}")
    if kind == "identity":
        return x
    if kind == "rot90":
        return np.rot90(x, 1, axes=(-2, -1))
    if kind == "rot180":
        return x[..., ::-1, ::-1]
    if kind == "rot270":
        return np.rot90(x, 3, axes=(-2, -1))
    if kind == "flip-h":
        return x[..., ::-1]
    if kind == "flip-v":
        return x[..., ::-1, :]
    if kind == "transpose":
        return np.swapaxes(x, -1, -2)
    if kind == "anti-transpose":
        return np.swapaxes(x, -1, -2)[..., ::-1, ::-1]
    raise ValueError(f"unknown spatial kind {kind!r}")


def _kind_tables():
    probe = np.arange(16).reshape(4, 4)
    images = {k: _apply_kind(k, probe).tobytes() for k in SPATIAL_KINDS}
    lookup = {v: k for k, v in images.items()}
    compose = {}
    for a in SPATIAL_KINDS:
        for b in SPATIAL_KINDS:
            compose[a, b] = lookup[_apply_kind(a, _apply_kind(b, probe)).tobytes()]
    inverse = {a: next(b for b in SPATIAL_KINDS if compose[a, b] == "identity") for a in SPATIAL_KINDS}
    return compose, inverse


_KIND_COMPOSE, _KIND_INVERSE = _kind_tables()


@dataclass(frozen=True)
class SpatialAction:
    """A square symmetry of the (H, W) axes plus an optional channel permutation.

    ``channel_perm`` is a gather index: output channel ``c`` of each block of
    ``len(channel_perm)`` channels is read from input channel
    ``channel_perm[c]`` of the same block.
    """

    kind: str = "identity"
    channel_perm: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in SPATIAL_KINDS:
            raise ValueError(f"unknown spatial kind {self.kind!r}")
        if self.channel_perm is not None:
            perm = tuple(int(p) for p in self.channel_perm)
            if perm == tuple(range(len(perm))):
                perm = None
            object.__setattr__(self, "channel_perm", perm)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.apply(x)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Apply to an array whose last three axes are (channels, H, W)."""
        out = _apply_kind(self.kind, np.asarray(x))
        if self.channel_perm is not None:
            out = out[..., self.channel_index(out.shape[-3]), :, :]
        return out

    def channel_index(self, channels: int) -> np.ndarray | None:
        """Gather index over ``channels`` realizing the per-block permutation."""
        if self.channel_perm is None:
            return None
        n = len(self.channel_perm)
        if channels % n:
            raise ValueError(f"channel permutation of length {n} cannot act on {channels} channels")
        block = np.asarray(self.channel_perm)
        return (np.arange(0, channels, n)[:, None] + block[None, :]).ravel()

    def compose(self, other: "SpatialAction") -> "SpatialAction":
        """Return ``self ∘ other`` (``other`` applied first)."""
        kind = _KIND_COMPOSE[self.kind, other.kind]
        a, b = self.channel_perm, other.channel_perm
        if a is None:
            perm = b
        elif b is None:
            perm = a
        else:
            if len(a) != len(b):
                raise ValueError("cannot compose channel permutations of different lengths")
            perm = tuple(b[i] for i in a)
        return SpatialAction(kind, perm)

    def inverse(self) -> "SpatialAction":
        perm = None
        if self.channel_perm is not None:
            perm = tuple(int(i) for i in np.argsort(self.channel_perm))
        return SpatialAction(_KIND_INVERSE[self.kind], perm)

    @property
    def is_permutation(self) -> bool:
        p = self.channel_perm
        return p is None or sorted(p) == list(range(len(p)))

    def to_json(self) -> dict:
        d = {"spatial": self.kind}
        if self.channel_perm is not None:
            d["channel_perm"] = list(self.channel_perm)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SpatialAction":
        perm = d.get("channel_perm")
        return cls(d["spatial"], tuple(perm) if perm is not None else None)

    def __str__(self):
        if self.channel_perm is None:
            return self.kind
        return f"{self.kind}{list(self.channel_perm)}"


IDENTITY = SpatialAction()


def _probe(actions: Iterable[SpatialAction]) -> np.ndarray:
    n = 1
    for a in actions:
        if a.channel_perm is not None:
            n = np.lcm(n, len(a.channel_perm))
    return np.arange(n * 16, dtype=np.int64).reshape(int(n), 4, 4)


@dataclass(frozen=True)
class GroupElement:
    index: int
    word: tuple[int, ...]
    action: SpatialAction

    @property
    def m(self) -> int:
        """1-based slice index of this element."""
        return self.index + 1

    def __str__(self):
        return f"g{self.index}:{self.action}"


@dataclass(frozen=True, eq=False)
class FiniteGroup:
    elements: tuple[GroupElement, ...]
    cayley: np.ndarray
    inverses: np.ndarray
    generators: tuple[SpatialAction, ...] = field(default=())

    def __post_init__(self):
        for arr in (self.cayley, self.inverses):
            arr.setflags(write=False)

    @property
    def order(self) -> int:
        return len(self.elements)

    def __len__(self):
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    def __getitem__(self, i: int) -> GroupElement:
        return self.elements[i]

    @property
    def identity(self) -> GroupElement:
        return self.elements[0]

    @property
    def slice_perms(self) -> np.ndarray:
        """Row ``s`` is the gather index of ``R_s``: position i reads slice m(g_i·s)."""
        return self.cayley.T

    def action(self, g: GroupElement | int) -> SpatialAction:
        return self.elements[_idx(g)].action

    def multiply(self, g: GroupElement | int, h: GroupElement | int) -> GroupElement:
        return self.elements[self.cayley[_idx(g), _idx(h)]]

    def inverse(self, g: GroupElement | int) -> GroupElement:
        return self.elements[self.inverses[_idx(g)]]

    def slice_permutation(self, s: GroupElement | int) -> np.ndarray:
        return self.cayley[:, _idx(s)].copy()

    def find(self, action: SpatialAction | str) -> GroupElement:
        if isinstance(action, str):
            action = SpatialAction(action)
        for e in self.elements:
            if e.action == action:
                return e
        raise KeyError(f"{action} is not an element of this group")

    def to_json(self) -> dict:
        return {"generators": [a.to_json() for a in self.generators], "max_order": max(64, self.order)}

    def __repr__(self):
        return f"FiniteGroup(order={self.order}, elements=[{', '.join(str(e.action) for e in self.elements)}])"


def _idx(g) -> int:
    return g.index if isinstance(g, GroupElement) else int(g)


def close_generators(generators: Sequence[SpatialAction], max_order: int = 64) -> FiniteGroup:
    """Breadth-first closure of ``generators`` under composition.

    Elements are told apart by their image of a probe tensor with distinct
    entries; element ``e·gen`` is discovered from ``e`` for each generator in
    list order.
    """
    generators = tuple(generators)
    if not generators:
        raise ValueError("need at least one generator")
    if max_order < 1:
        raise ValueError("max_order must be >= 1")
    probe = _probe(generators)
    flat_probe = np.sort(probe.ravel())
    for gen in generators:
        image = gen.apply(probe) if gen.is_permutation else None
        if image is None or not np.array_equal(np.sort(image.ravel()), flat_probe):
            raise NonInvertibleGenerator(f"{gen} is not invertible")

    def key(a: SpatialAction) -> bytes:
        return a.apply(probe).tobytes()

    elements = [GroupElement(0, (), IDENTITY)]
    seen = {key(IDENTITY): 0}
    queue = deque([0])
    while queue:
        e = elements[queue.popleft()]
        for gi, gen in enumerate(generators):
            a = e.action.compose(gen)
            k = key(a)
            if k in seen:
                continue
            if len(elements) >= max_order:
                raise ClosureExceeded(f"more than {max_order} elements generated")
            seen[k] = len(elements)
            elements.append(GroupElement(len(elements), e.word + (gi,), a))
            queue.append(seen[k])

    n = len(elements)
    cayley = np.empty((n, n), dtype=np.int64)
    for i, a in enumerate(elements):
        for j, b in enumerate(elements):
            cayley[i, j] = seen[key(a.action.compose(b.action))]
    inverses = np.array([int(np.flatnonzero(cayley[i] == 0)[0]) for i in range(n)])
    return FiniteGroup(tuple(elements), cayley, inverses, generators)


def trivial_group() -> FiniteGroup:
    return close_generators([IDENTITY])


def flip_group() -> FiniteGroup:
    return close_generators([SpatialAction("flip-h")])


def klein_group() -> FiniteGroup:
    return close_generators([SpatialAction("flip-h"), SpatialAction("flip-v")])


def dihedral_group() -> FiniteGroup:
    """Symmetries of the square generated by a quarter turn and a horizontal flip."""
    return close_generators([SpatialAction("rot90"), SpatialAction("flip-h")])


NAMED_GROUPS = {
    "trivial": trivial_group,
    "flip": flip_group,
    "klein": klein_group,
    "d8": dihedral_group,
}


def group_from_json(doc: dict | str) -> FiniteGroup:
    if isinstance(doc, str):
        return NAMED_GROUPS[doc]()
    gens = [SpatialAction.from_json(g) for g in doc["generators"]]
    return close_generators(gens, doc.get("max_order", 64))


def load_group(path: str | os.PathLike) -> FiniteGroup:
    with open(path) as f:
        return group_from_json(json.load(f))


@dataclass
class AxiomCheck:
    name: str
    passed: bool
    evaluated: int
    detail: str = ""


@dataclass
class AxiomReport:
    order: int
    checks: list[AxiomCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> AxiomCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def format(self) -> str:
        lines = [f"group of order {self.order}"]
        for c in self.checks:
            status = "PASS" if c.passed else "FAIL"
            line = f"  {status} {c.name} ({c.evaluated} cases)"
            if c.detail:
                line += f": {c.detail}"
            lines.append(line)
        lines.append("all checks passed" if self.passed else "some checks FAILED")
        return "\n".join(lines)


def verify_axioms(group: FiniteGroup) -> AxiomReport:
    """Exhaustively check the group laws, the action homomorphism and R_h R_s = R_hs."""
    n = group.order
    table = np.asarray(group.cayley)
    checks = []

    in_range = bool(table.shape == (n, n) and ((table >= 0) & (table < n)).all())
    latin = in_range and all(len(set(row)) == n for row in table) and all(len(set(col)) == n for col in table.T)
    checks.append(AxiomCheck("closure", latin, n * n, "" if latin else "table is not a Latin square over the elements"))
    if not in_range:
        return AxiomReport(n, checks)

    # vectorised over all n^3 triples: (ab)c == a(bc)
    left = table[table, :]  # left[a, b, c] = (a*b)*c
    right = table[:, table]  # right[a, b, c] = a*(b*c)
    bad = np.argwhere(left != right)
    detail = "" if not len(bad) else f"first failure at triple {tuple(int(v) for v in bad[0])}"
    checks.append(AxiomCheck("associativity", not len(bad), n ** 3, detail))

    ident = bool((table[0] == np.arange(n)).all() and (table[:, 0] == np.arange(n)).all())
    checks.append(AxiomCheck("identity", ident, 2 * n))

    inv = np.asarray(group.inverses)
    inv_ok = bool(all(table[i, inv[i]] == 0 and table[inv[i], i] == 0 for i in range(n)))
    checks.append(AxiomCheck("inverses", inv_ok, n))

    probe = _probe(e.action for e in group.elements).astype(float)
    hom_fail = []
    for i, a in enumerate(group.elements):
        for j, b in enumerate(group.elements):
            lhs = group.elements[table[i, j]].action.apply(probe)
            if not np.array_equal(lhs, a.action.apply(b.action.apply(probe))):
                hom_fail.append((i, j))
    checks.append(AxiomCheck(
        "action homomorphism", not hom_fail, n * n,
        f"first failure at pair {hom_fail[0]}" if hom_fail else "",
    ))

    perms = table.T
    perm_fail = []
    slots = np.arange(n)
    for h in range(n):
        for s in range(n):
            # R_h(R_s(X)) gathers X[perms[s]][perms[h]]
            if not np.array_equal(slots[perms[s]][perms[h]], perms[table[h, s]]):
                perm_fail.append((h, s))
    checks.append(AxiomCheck(
        "slice permutation composition", not perm_fail, n * n,
        f"first failure at pair {perm_fail[0]}" if perm_fail else "",
    ))
    return AxiomReport(n, checks)
