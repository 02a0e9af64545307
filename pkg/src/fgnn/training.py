"""SGD training, evaluation, metrics CSVs and parameter checkpoints."""

from __future__ import annotations

import csv
import io
import json
import os
import struct
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import engine as E
from .checkers import Dataset
from .engine import Graph, ParamStore
from .networks import Network, NetworkSpec

CSV_COLUMNS = ["model", "group", "params", "seed", "epoch", "train_loss", "train_top1", "test_top1", "test_top3", "wall_ms"]
MAGIC = b"FGNN"
CHECKPOINT_VERSION = 1


class EmptyDataset(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 5
    batch_size: int = 64
    seed: int = 0
    loss: str = "cross_entropy"
    dtype: str = "float64"
    test_fraction: float = 0.1
    split_seed: int = 0
    # wall-clock times make the metrics CSV irreproducible; off by default
    record_wall_time: bool = False

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path) as f:
            return cls.from_json(json.load(f))


@dataclass
class MetricsRecord:
    model: str
    group: str
    params: int
    seed: int
    epoch: int
    train_loss: float
    train_top1: float
    test_top1: float
    test_top3: float
    wall_ms: int = 0

    def row(self) -> list[str]:
        return [self.model, self.group, str(self.params), str(self.seed), str(self.epoch),
                f"{self.train_loss:.8f}", f"{self.train_top1:.8f}", f"{self.test_top1:.8f}",
                f"{self.test_top3:.8f}", str(self.wall_ms)]

    @classmethod
    def from_row(cls, row: dict) -> "MetricsRecord":
        return cls(row["model"], row["group"], int(row["params"]), int(row["seed"]), int(row["epoch"]),
                   float(row["train_loss"]), float(row["train_top1"]), float(row["test_top1"]),
                   float(row["test_top3"]), int(row["wall_ms"]))


class SGD:
    """SGD with classical momentum: v <- mu v - lr g; w <- w + v."""

    def __init__(self, params: ParamStore, lr: float = 0.01, momentum: float = 0.9):
        self.params, self.lr, self.momentum = params, lr, momentum
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict):
        for name in self.params:
            g = grads.get(name)
            if g is None:
                continue
            v = self.velocity[name]
            v *= self.momentum
            v -= self.lr * g
            self.params[name] += v


def _loss(kind: str, logits, targets):
    if kind == "cross_entropy":
        return E.cross_entropy(logits, targets)
    if kind == "bce":
        return E.binary_cross_entropy(logits, targets)
    raise ValueError(f"unknown loss {kind!r}")


def train_step(network: Network, optimizer: SGD, x, y, loss: str = "cross_entropy",
               parity: int = 0) -> tuple[float, np.ndarray]:
    """One forward/backward/update; returns (loss, logits before the update)."""
    graph = Graph(network.params)
    out = network.forward(x, graph, parity)
    logits = out[network.spec.logits]
    value = _loss(loss, logits, y)
    grads = graph.backward(value)
    optimizer.step(grads)
    return float(value.data), logits.data


def topk_hits(logits: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Whether each label is among the k largest entries; ties go to the lowest index."""
    order = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return (order == labels[:, None]).any(axis=1)


def evaluate(network: Network, dataset: Dataset, batch_size: int = 512) -> tuple[float, float]:
    """Top-1 and top-3 accuracy of the played move over ``dataset``."""
    if len(dataset) == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    x = dataset.boards().astype(network.dtype)
    y = dataset.labels()
    logits = network.logits(x, batch_size=batch_size)
    return float(topk_hits(logits, y, 1).mean()), float(topk_hits(logits, y, 3).mean())


def train(spec: NetworkSpec, dataset: Dataset, config: TrainConfig, out_dir: str | os.PathLike | None = None,
          log=None) -> tuple[Network, list[MetricsRecord]]:
    """Train on the game-level split of ``dataset``; one metrics record per epoch."""
    if len(dataset) == 0:
        raise EmptyDataset("dataset is empty")
    network = Network(spec, seed=config.seed, dtype=np.dtype(config.dtype))
    train_set, test_set = dataset.split(config.test_fraction, config.split_seed)
    if len(train_set) == 0:
        raise EmptyDataset("training split is empty")
    x = train_set.boards().astype(network.dtype)
    y = train_set.labels()
    opt = SGD(network.params, config.lr, config.momentum)
    rng = np.random.default_rng(config.seed)
    records = []
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(x))
        total_loss = hits = 0.0
        for i in range(0, len(order), config.batch_size):
            idx = order[i:i + config.batch_size]
            loss, logits = train_step(network, opt, x[idx], y[idx], config.loss)
            total_loss += loss * len(idx)
            hits += topk_hits(logits, y[idx], 1).sum()
        test1, test3 = evaluate(network, test_set) if len(test_set) else (float("nan"), float("nan"))
        wall = int(round(1000 * (time.perf_counter() - t0))) if config.record_wall_time else 0
        rec = MetricsRecord(spec.name, spec.group_name, network.param_count, config.seed, epoch,
                            total_loss / len(x), float(hits) / len(x), test1, test3, wall)
        records.append(rec)
        if log:
            log(f"{spec.name} seed={config.seed} epoch {epoch}: loss {rec.train_loss:.4f} "
                f"train@1 {rec.train_top1:.4f} test@1 {test1:.4f} test@3 {test3:.4f}")
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_params(network.params, out / "weights.fgnn")
        write_metrics(records, out / "metrics.csv")
        spec.save(out / "spec.json")
        with open(out / "config.json", "w") as f:
            json.dump(asdict(config), f, indent=1, sort_keys=True)
    return network, records


def train_arrays(network: Network, x: np.ndarray, y: np.ndarray, config: TrainConfig) -> list[float]:
    """Plain minibatch loop over arrays (e.g. segmentation masks); returns mean loss per epoch."""
    if len(x) == 0:
        raise EmptyDataset("no training samples")
    x = np.asarray(x, dtype=network.dtype)
    opt = SGD(network.params, config.lr, config.momentum)
    rng = np.random.default_rng(config.seed)
    losses = []
    for _ in range(config.epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for i in range(0, len(order), config.batch_size):
            idx = order[i:i + config.batch_size]
            loss, _ = train_step(network, opt, x[idx], y[idx], config.loss)
            total += loss * len(idx)
        losses.append(total / len(x))
    return losses


def metrics_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def write_metrics(records, path):
    with open(path, "w", newline="") as f:
        f.write(metrics_csv(records))


def read_metrics(path) -> list[MetricsRecord]:
    with open(path, newline="") as f:
        return [MetricsRecord.from_row(r) for r in csv.DictReader(f)]


def sort_records(records) -> list[MetricsRecord]:
    kind = lambda r: (0 if r.model.startswith("cnn") else 1, r.model)
    return sorted(records, key=lambda r: (kind(r), r.params, r.seed, r.epoch))


# checkpoints ------------------------------------------------------------------------


def save_params(params: ParamStore, path):
    """Binary checkpoint: b"FGNN", u32 version, then per parameter
    (u32 name length, utf-8 name, u32 rank, u32 dims..., float64 LE values)."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        for name, value in params.items():
            raw = name.encode()
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", value.ndim))
            f.write(struct.pack(f"<{value.ndim}I", *value.shape))
            f.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def load_params(path) -> ParamStore:
    store = ParamStore()
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not an FGNN checkpoint")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 8
    while pos < len(data):
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + n].decode()
        pos += n
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        store[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * count
    return store


def load_network(spec: NetworkSpec, weights_path) -> Network:
    net = Network(spec)
    loaded = load_params(weights_path)
    if set(loaded) != set(net.params):
        raise E.ShapeMismatch(f"checkpoint parameters {sorted(loaded)} do not match the spec's {sorted(net.params)}")
    for k, v in loaded.items():
        if v.shape != net.params[k].shape:
            raise E.ShapeMismatch(f"parameter {k}: checkpoint shape {v.shape} vs spec shape {net.params[k].shape}")
        net.params[k] = v
    return net
