"""Network specifications (JSON-serialisable DAGs), builders and equivariance checks."""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import checkers
from . import engine as E
from .engine import Graph, ParamStore, ShapeMismatch, Tensor
from .equivariant import (
    MoveDropSpec,
    Passthrough,
    StackedTensor,
    WrappedLayer,
    drop_identity,
    drop_sum,
    lift,
    merge,
    move_drop,
)
from .groups import FiniteGroup, GroupElement, SpatialAction, group_from_json
from .nn import AvgPool, Conv2D, Dense, Flatten, Layer, MaxPool, ReLU, Sequential, Sigmoid, Softmax, Upsample


class UnsupportedGroup(ValueError):
    pass


class IndivisibleSpatial(ValueError):
    pass


class InvalidSpec(ValueError):
    pass


@dataclass
class NetworkSpec:
    name: str
    input_shape: tuple[int, ...]
    nodes: list[dict]
    output: str
    logits: str
    group: str | dict = "trivial"
    task: str = "checkers"
    output_action: str = "policy"

    def to_json(self) -> dict:
        return {
            "name": self.name, "task": self.task, "group": self.group,
            "input_shape": list(self.input_shape), "output_action": self.output_action,
            "nodes": self.nodes, "output": self.output, "logits": self.logits,
        }

    @classmethod
    def from_json(cls, d: dict) -> "NetworkSpec":
        return cls(d["name"], tuple(d["input_shape"]), d["nodes"], d["output"], d.get("logits", d["output"]),
                   d.get("group", "trivial"), d.get("task", "checkers"), d.get("output_action", "policy"))

    def save(self, path: str | os.PathLike):
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=1)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "NetworkSpec":
        with open(path) as f:
            return cls.from_json(json.load(f))

    def build_group(self) -> FiniteGroup:
        return group_from_json(self.group)

    @property
    def group_name(self) -> str:
        if isinstance(self.group, str):
            return self.group
        return "+".join(g["spatial"] for g in self.group["generators"])

    def validate(self):
        ids = set()
        for node in self.nodes:
            for src in node.get("inputs", []):
                if src not in ids:
                    raise InvalidSpec(f"node {node['id']!r} reads {src!r} before it is defined (or a cycle)")
            if node["id"] in ids:
                raise InvalidSpec(f"duplicate node id {node['id']!r}")
            ids.add(node["id"])
        for key in (self.output, self.logits):
            if key not in ids:
                raise InvalidSpec(f"unknown node {key!r}")


def _make_layer(node: dict) -> Layer:
    op, name = node["op"], node["id"]
    if op == "conv":
        conv = Conv2D(node["filters"], node.get("kernel", 3), node.get("stride", 1), name=name)
        if node.get("activation") == "relu":
            return Sequential([conv, ReLU()], name=name)
        return conv
    if op == "dense":
        dense = Dense(node["features"], name=name)
        if node.get("activation") == "relu":
            return Sequential([dense, ReLU()], name=name)
        return dense
    if op == "relu":
        return ReLU(name)
    if op == "maxpool":
        return MaxPool(node.get("k", 2), node.get("stride"), name)
    if op == "avgpool":
        return AvgPool(node.get("k", 2), node.get("stride"), name)
    if op == "upsample":
        return Upsample(node.get("factor", 2), name)
    if op == "flatten":
        return Flatten(name)
    if op == "softmax":
        return Softmax(1, name)
    if op == "sigmoid":
        return Sigmoid(name)
    raise InvalidSpec(f"unknown layer op {op!r}")


_LAYER_OPS = {"conv", "dense", "relu", "maxpool", "avgpool", "upsample", "flatten", "softmax", "sigmoid"}


class Network:
    """A built network: layer objects bound to a seeded parameter store."""

    def __init__(self, spec: NetworkSpec, seed: int = 0, dtype=np.float64):
        spec.validate()
        self.spec = spec
        self.group = spec.build_group()
        self.dtype = np.dtype(dtype)
        self.params = ParamStore()
        self.modules: dict[str, object] = {}
        rng = np.random.default_rng(seed)
        shapes: dict[str, tuple] = {}
        stacked: dict[str, bool] = {}
        for node in spec.nodes:
            nid, op, ins = node["id"], node["op"], node.get("inputs", [])
            in_shape = shapes[ins[0]] if ins else None
            in_stacked = stacked[ins[0]] if ins else False
            if op == "input":
                shapes[nid], stacked[nid] = tuple(spec.input_shape), False
            elif op == "lift":
                shapes[nid] = (in_shape[0] * self.group.order, *in_shape[1:])
                stacked[nid] = True
            elif op in _LAYER_OPS:
                layer = _make_layer(node)
                if in_stacked and node.get("wrapped", op in ("conv", "dense")):
                    if op in ("flatten", "dense"):
                        raise InvalidSpec(f"{nid}: flatten/dense cannot act on a stacked tensor")
                    module = WrappedLayer(layer, self.group)
                elif in_stacked and op in ("relu", "maxpool", "avgpool", "upsample"):
                    module = Passthrough(layer, self.group)
                else:
                    module = layer
                if op in ("maxpool", "avgpool"):
                    k = layer.k
                    if in_shape[1] % k or in_shape[2] % k:
                        raise IndivisibleSpatial(f"{nid}: spatial size {in_shape[1:]} not divisible by {k}")
                shapes[nid] = module.build(in_shape, self.params, rng, self.dtype)
                self.modules[nid] = module
                # an unwrapped layer leaves the stack (used for negative controls)
                stacked[nid] = isinstance(module, (WrappedLayer, Passthrough))
            elif op in ("merge", "concat"):
                a, b = (shapes[i] for i in ins)
                if a[1:] != b[1:]:
                    raise ShapeMismatch(f"{nid}: cannot merge {a} and {b}")
                shapes[nid] = (a[0] + b[0], *a[1:])
                stacked[nid] = all(stacked[i] for i in ins) and op == "merge"
            elif op == "drop_sum":
                shapes[nid] = (in_shape[0] // self.group.order, *in_shape[1:])
                stacked[nid] = False
            elif op == "drop_identity":
                shapes[nid], stacked[nid] = in_shape, False
            elif op == "move_drop":
                mspec = MoveDropSpec.from_sizes(node["n_sym"], node["n_asym"])
                mspec.validate(in_shape[0])
                self.modules[nid] = mspec
                shapes[nid] = (node["n_sym"] + 2 * node["n_asym"], *in_shape[1:])
                stacked[nid] = False
            elif op == "mask32":
                if tuple(in_shape) != (4, 8, 8):
                    raise ShapeMismatch(f"{nid}: mask32 expects (4, 8, 8), got {in_shape}")
                shapes[nid], stacked[nid] = (128,), False
            else:
                raise InvalidSpec(f"unknown op {op!r}")
        self.shapes = shapes

    @property
    def param_count(self) -> int:
        return self.params.count()

    def forward(self, x, graph: Graph | None = None, parity: int = 0) -> dict[str, Tensor]:
        """Run the DAG; returns every node's value (stacked values unwrapped)."""
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != tuple(self.spec.input_shape):
            raise ShapeMismatch(f"network expects input samples {tuple(self.spec.input_shape)}, got {x.shape[1:]}")
        store = None if graph is not None else self.params
        vals: dict[str, object] = {}
        for node in self.spec.nodes:
            nid, op, ins = node["id"], node["op"], node.get("inputs", [])
            a = vals[ins[0]] if ins else None
            if op == "input":
                vals[nid] = graph.input(x) if graph is not None else Tensor(x)
            elif op == "lift":
                vals[nid] = lift(a, self.group)
            elif nid in self.modules and op in _LAYER_OPS:
                module = self.modules[nid]
                if isinstance(module, (WrappedLayer, Passthrough)):
                    vals[nid] = module(graph, a, store)
                else:
                    t = a.tensor if isinstance(a, StackedTensor) else a
                    vals[nid] = module(graph, t, store)
            elif op == "merge" and all(isinstance(vals[i], StackedTensor) for i in ins):
                vals[nid] = merge(vals[ins[0]], vals[ins[1]])
            elif op in ("merge", "concat"):
                ts = [v.tensor if isinstance(v, StackedTensor) else v for v in (vals[i] for i in ins)]
                vals[nid] = E.concat(ts, axis=1)
            elif op == "drop_sum":
                vals[nid] = drop_sum(a) if isinstance(a, StackedTensor) else a
            elif op == "drop_identity":
                vals[nid] = drop_identity(a) if isinstance(a, StackedTensor) else a
            elif op == "move_drop":
                vals[nid] = move_drop(a, self.modules[nid])
            elif op == "mask32":
                t = a.tensor if isinstance(a, StackedTensor) else a
                flat = E.reshape(t, (t.shape[0], 256))
                vals[nid] = E.take(flat, checkers.mask_index(parity), axis=1)
        return {k: (v.tensor if isinstance(v, StackedTensor) else v) for k, v in vals.items()}

    def predict(self, x, parity: int = 0, batch_size: int = 512, node: str | None = None) -> np.ndarray:
        node = node or self.spec.output
        outs = []
        for i in range(0, len(x), batch_size):
            outs.append(self.forward(x[i:i + batch_size], parity=parity)[node].data)
        return np.concatenate(outs, axis=0)

    def logits(self, x, parity: int = 0, batch_size: int = 512) -> np.ndarray:
        return self.predict(x, parity, batch_size, self.spec.logits)


# builders -----------------------------------------------------------------------


def _conv(nid, src, filters, kernel=3, activation="relu", wrapped=False):
    node = {"id": nid, "op": "conv", "inputs": [src], "filters": filters, "kernel": kernel}
    if activation:
        node["activation"] = activation
    if wrapped:
        node["wrapped"] = True
    return node


def build_baseline_cnn(filters: int, depth: int = 10) -> NetworkSpec:
    """``depth`` 3x3 conv+ReLU layers, a final conv to 4 direction planes, mask, softmax."""
    if filters < 1 or depth < 1:
        raise ValueError("filters and depth must be >= 1")
    nodes = [{"id": "x", "op": "input"}]
    src = "x"
    for i in range(depth):
        nodes.append(_conv(f"conv{i}", src, filters))
        src = f"conv{i}"
    nodes.append(_conv("head", src, 4, activation=None))
    nodes.append({"id": "mask", "op": "mask32", "inputs": ["head"]})
    nodes.append({"id": "policy", "op": "softmax", "inputs": ["mask"]})
    return NetworkSpec(f"cnn-f{filters}", (1, 8, 8), nodes, "policy", "mask", "trivial", "checkers", "policy")


def _is_flip_group(group: FiniteGroup) -> bool:
    return group.order == 2 and group.elements[1].action == SpatialAction("flip-h")


def build_fgnn_cnn(filters: int, depth: int = 10, group: str | dict = "flip") -> NetworkSpec:
    """Lift, ``depth`` wrapped conv+ReLU layers with ``filters`` per branch, a wrapped
    2-filter head (stacked to NE SE NW SW), Drop = identity, mask, softmax."""
    if not _is_flip_group(group_from_json(group)):
        raise UnsupportedGroup("the checkers FGNN head needs the order-2 horizontal flip group")
    nodes = [{"id": "x", "op": "input"}, {"id": "lift", "op": "lift", "inputs": ["x"]}]
    src = "lift"
    for i in range(depth):
        nodes.append(_conv(f"conv{i}", src, filters, wrapped=True))
        src = f"conv{i}"
    nodes.append(_conv("head", src, 2, activation=None, wrapped=True))
    nodes.append({"id": "drop", "op": "drop_identity", "inputs": ["head"]})
    nodes.append({"id": "mask", "op": "mask32", "inputs": ["drop"]})
    nodes.append({"id": "policy", "op": "softmax", "inputs": ["mask"]})
    return NetworkSpec(f"fgnn-f{filters}", (1, 8, 8), nodes, "policy", "mask", group, "checkers", "policy")


def cnn_param_count(filters: int, depth: int = 10, fgnn: bool = False) -> int:
    """Closed-form trainable parameter count of the checkers CNNs."""
    k2 = 9
    if not fgnn:
        c_in, total = 1, 0
        for _ in range(depth):
            total += k2 * c_in * filters + filters
            c_in = filters
        return total + k2 * c_in * 4 + 4
    c_in, total = 2, 0
    for _ in range(depth):
        total += k2 * c_in * filters + filters
        c_in = 2 * filters
    return total + k2 * c_in * 2 + 2


def matched_fgnn_filters(baseline_filters: int, depth: int = 10) -> int:
    """FGNN per-branch filter count whose parameter total is closest to the baseline's."""
    target = cnn_param_count(baseline_filters, depth)
    return min(range(1, 2 * baseline_filters + 1),
               key=lambda f: (abs(cnn_param_count(f, depth, True) - target), f))


def build_mini_unet(group: str | dict = "trivial", levels: int = 2, base_filters: int = 8,
                    size: int = 32, skips: bool = True) -> NetworkSpec:
    """Small U-Net; ``base_filters`` is the stacked activation width at the top level.

    Each wrapped conv has ``width / |G|`` filters per branch, so all variants
    share activation widths and the FGNN ones have roughly 1/|G| the weights.
    """
    G = group_from_json(group)
    n = G.order
    if size % (2 ** levels):
        raise IndivisibleSpatial(f"input side {size} not divisible by 2^{levels}")
    if base_filters % n:
        raise ValueError(f"base_filters={base_filters} must be divisible by |G|={n}")
    nodes = [{"id": "x", "op": "input"}, {"id": "lift", "op": "lift", "inputs": ["x"]}]
    src = "lift"
    skip_ids = []

    def conv(nid, s, width, kernel=3, activation="relu"):
        nodes.append(_conv(nid, s, width // n, kernel, activation, wrapped=True))
        return nid

    for lvl in range(levels):
        w = base_filters * 2 ** lvl
        src = conv(f"enc{lvl}a", src, w)
        src = conv(f"enc{lvl}b", src, w)
        skip_ids.append(src)
        nodes.append({"id": f"pool{lvl}", "op": "maxpool", "inputs": [src], "k": 2})
        src = f"pool{lvl}"
    w = base_filters * 2 ** levels
    src = conv("mid_a", src, w)
    src = conv("mid_b", src, w)
    for lvl in reversed(range(levels)):
        w = base_filters * 2 ** lvl
        nodes.append({"id": f"up{lvl}", "op": "upsample", "inputs": [src], "factor": 2})
        src = conv(f"upconv{lvl}", f"up{lvl}", w)
        if skips:
            nodes.append({"id": f"merge{lvl}", "op": "merge", "inputs": [skip_ids[lvl], src]})
            src = f"merge{lvl}"
        src = conv(f"dec{lvl}a", src, w)
        src = conv(f"dec{lvl}b", src, w)
    nodes.append(_conv("head", src, 1, kernel=1, activation=None, wrapped=True))
    nodes.append({"id": "drop", "op": "drop_sum", "inputs": ["head"]})
    nodes.append({"id": "mask", "op": "sigmoid", "inputs": ["drop"]})
    name = f"unet-{G.order}-f{base_filters}" + ("" if skips else "-noskip")
    return NetworkSpec(name, (1, size, size), nodes, "mask", "drop", group, "segmentation", "spatial")


def without_merges(spec: NetworkSpec) -> NetworkSpec:
    """Copy of ``spec`` with every merge node replaced by its second (main-path) input."""
    spec = copy.deepcopy(spec)
    rename = {}
    nodes = []
    for node in spec.nodes:
        node["inputs"] = [rename.get(i, i) for i in node.get("inputs", [])]
        if node["op"] == "merge":
            rename[node["id"]] = node["inputs"][1]
            continue
        nodes.append(node)
    spec.nodes = nodes
    spec.output = rename.get(spec.output, spec.output)
    spec.logits = rename.get(spec.logits, spec.logits)
    spec.name += "-nomerge"
    return spec


# equivariance certification ---------------------------------------------------------


def action_parity(action: SpatialAction) -> int:
    """1 if ``action`` swaps the two colour classes of an 8x8 board."""
    mask = checkers.playable_mask(0)[None]
    return 0 if np.array_equal(action.apply(mask)[0], mask[0]) else 1


def _output_action(kind, group: FiniteGroup) -> Callable[[GroupElement, np.ndarray], np.ndarray]:
    if callable(kind):
        return kind
    if kind == "spatial":
        return lambda g, y: g.action.apply(y)
    if kind == "identity":
        return lambda g, y: y
    if kind == "policy":
        def act(g, y):
            if g.index == 0:
                return y
            if g.action != SpatialAction("flip-h"):
                raise UnsupportedGroup("policy output action is only defined for the horizontal flip")
            return checkers.reflect_policy(y)
        return act
    raise ValueError(f"unknown output action {kind!r}")


@dataclass
class EquivarianceReport:
    residuals: dict[str, float]
    tolerance: float
    n_samples: int
    max_residual: float = field(init=False)

    def __post_init__(self):
        self.max_residual = max(self.residuals.values()) if self.residuals else 0.0

    @property
    def passed(self) -> bool:
        return self.max_residual < self.tolerance

    def format(self) -> str:
        lines = [f"equivariance over {len(self.residuals)} elements, {self.n_samples} samples, tol {self.tolerance:g}"]
        for name, r in self.residuals.items():
            lines.append(f"  {name:24s} max |N(gX) - g'N(X)| = {r:.3e}")
        lines.append(f"{'PASS' if self.passed else 'FAIL'} max residual {self.max_residual:.3e}")
        return "\n".join(lines)


def check_network_equivariance(network: Network, group: FiniteGroup | None = None, output_action="auto",
                               n_samples: int = 100, tolerance: float = 1e-9, seed: int = 0,
                               inputs: np.ndarray | None = None) -> EquivarianceReport:
    """Compare N(gX) with g'N(X) for every g on random inputs.

    Both the network output and its logits node are compared; the residual
    per element is the larger sup-norm of the two.
    """
    group = group or network.group
    if output_action == "auto":
        output_action = network.spec.output_action
    act = _output_action(output_action, group)
    if inputs is None:
        rng = np.random.default_rng(seed)
        inputs = rng.standard_normal((n_samples, *network.spec.input_shape))
    has_mask = any(n["op"] == "mask32" for n in network.spec.nodes)
    base = network.forward(inputs, parity=0)
    residuals = {}
    for g in group:
        parity = action_parity(g.action) if has_mask else 0
        moved = network.forward(g.action.apply(inputs), parity=parity)
        r = 0.0
        for key in {network.spec.output, network.spec.logits}:
            r = max(r, float(np.abs(moved[key].data - act(g, base[key].data)).max()))
        residuals[f"g{g.index} {g.action}"] = r
    return EquivarianceReport(residuals, tolerance, len(inputs))


def mirror_consistency(network: Network, boards, gap: float = 1e-6) -> dict:
    """Count boards where argmax N(reflect b) != reflect_move(argmax N(b)).

    Boards whose top two logits (on either side) differ by less than ``gap``
    are excluded.
    """
    x = np.stack([checkers.encode_board(b) for b in boards])[:, None]
    xr = np.stack([checkers.encode_board(checkers.reflect_board(b)) for b in boards])[:, None]
    parity = boards[0].parity if boards else 0
    p = network.logits(x, parity=parity)
    q = network.logits(xr, parity=1 - parity)
    checked = excluded = violations = 0
    for a, b in zip(p, q):
        ta, tb = np.sort(a)[-2:], np.sort(b)[-2:]
        if ta[1] - ta[0] < gap or tb[1] - tb[0] < gap:
            excluded += 1
            continue
        checked += 1
        expect = checkers.reflect_move(checkers.Move.from_index(int(np.argmax(a)))).index
        if int(np.argmax(b)) != expect:
            violations += 1
    return {"checked": checked, "excluded": excluded, "violations": violations}
