"""Figures written next to the metrics CSV."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

COLORS = {"cnn": "tab:blue", "fgnn": "tab:orange"}


def family(model: str) -> str:
    return model.split("-")[0]


def final_epoch(records):
    last = {}
    for r in records:
        key = (r.model, r.seed)
        if key not in last or r.epoch > last[key].epoch:
            last[key] = r
    return list(last.values())


def plot_accuracy(records, path):
    """Final test top-1 (left) and top-3 (right) against parameter count."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6), sharex=True)
    by_model = defaultdict(list)
    for r in final_epoch(records):
        by_model[r.model].append(r)
    for ax, attr, title in ((axes[0], "test_top1", "top-1 accuracy"), (axes[1], "test_top3", "top-3 accuracy")):
        fams = defaultdict(list)
        for model, rs in sorted(by_model.items()):
            fam = family(model)
            vals = [getattr(r, attr) for r in rs]
            ax.scatter([rs[0].params] * len(vals), vals, color=COLORS.get(fam), alpha=0.4, s=14)
            fams[fam].append((rs[0].params, float(np.median(vals))))
        for fam, pts in fams.items():
            pts.sort()
            ax.plot(*zip(*pts), "o-", color=COLORS.get(fam), label=fam.upper())
        ax.set_title(title)
        ax.set_xlabel("trainable parameters")
        ax.grid(alpha=0.3)
    axes[0].set_ylabel("accuracy on held-out games")
    axes[0].legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_overfitting(records, path):
    """Train vs test top-1; the dashed line marks no generalisation gap."""
    fig, ax = plt.subplots(figsize=(4.2, 4.2))
    finals = final_epoch(records)
    for fam in sorted({family(r.model) for r in finals}):
        rs = [r for r in finals if family(r.model) == fam]
        ax.scatter([r.train_top1 for r in rs], [r.test_top1 for r in rs], color=COLORS.get(fam), label=fam.upper())
    vals = [v for r in finals for v in (r.train_top1, r.test_top1)]
    if vals:
        lo, hi = min(vals) - 0.02, max(vals) + 0.02
        ax.plot([lo, hi], [lo, hi], "k--", lw=1)
    ax.set_xlabel("train top-1")
    ax.set_ylabel("test top-1")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_learning_curves(records, path):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    curves = defaultdict(list)
    for r in records:
        curves[(r.model, r.seed)].append((r.epoch, r.test_top1))
    for (model, seed), pts in sorted(curves.items()):
        pts.sort()
        ax.plot(*zip(*pts), color=COLORS.get(family(model)), alpha=0.7,
                label=model if seed == min(s for m, s in curves if m == model) else None)
    ax.set_xlabel("epoch")
    ax.set_ylabel("test top-1")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_figures(records, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "accuracy.png", out / "overfitting.png", out / "learning_curves.png"]
    plot_accuracy(records, paths[0])
    plot_overfitting(records, paths[1])
    plot_learning_curves(records, paths[2])
    return paths
