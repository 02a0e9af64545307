"""Desk-scale checkers comparison of parameter-matched CNN and FGNN-CNN models."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import checkers
from .checkers import Dataset
from .networks import (
    Network,
    NetworkSpec,
    build_baseline_cnn,
    build_fgnn_cnn,
    check_network_equivariance,
    matched_fgnn_filters,
)
from .plots import final_epoch, write_figures
from .training import TrainConfig, load_network, read_metrics, sort_records, train, write_metrics


def param_mismatch(baseline: NetworkSpec, fgnn: NetworkSpec) -> float:
    a, b = Network(baseline).param_count, Network(fgnn).param_count
    return abs(b - a) / a


def random_policy_accuracy(dataset: Dataset, forced_capture: bool = True) -> float:
    """Expected top-1 of a policy choosing uniformly among legal moves."""
    return float(np.mean([1.0 / len(checkers.legal_moves(r.board, forced_capture)) for r in dataset]))


def collect_runs(runs_dir) -> list:
    records = []
    for path in sorted(Path(runs_dir).glob("*/metrics.csv")):
        records += read_metrics(path)
    return sort_records(records)


def report(runs_dir, out_csv, figures_dir=None) -> list:
    """Merge every run's metrics into one CSV and draw the comparison figures."""
    records = collect_runs(runs_dir)
    write_metrics(records, out_csv)
    if figures_dir is not None and records:
        write_figures(records, figures_dir)
    return records


def _train_job(args):
    spec_json, data_path, config, out_dir = args
    spec = NetworkSpec.from_json(spec_json)
    dataset = Dataset.load(data_path)
    train(spec, dataset, config, out_dir)
    return out_dir


def run_desk_experiment(out_dir, positions: int = 50_000, seeds=(0, 1, 2), filters: int = 10, depth: int = 10,
                        epochs: int = 5, dtype: str = "float32", data_seed: int = 0, jobs: int = 1,
                        config: TrainConfig | None = None, log=print) -> dict:
    """Generate data, train both model families per seed, report and summarise."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data_path = out / "dataset.jsonl"
    if data_path.exists():
        dataset = Dataset.load(data_path)
    else:
        dataset = checkers.gen_synthetic_dataset(data_seed, n_games=10 * positions, max_positions=positions)
        dataset.save(data_path)
    log(f"dataset: {len(dataset)} positions from {len(set(dataset.game_ids()))} games")

    baseline = build_baseline_cnn(filters, depth)
    fgnn = build_fgnn_cnn(matched_fgnn_filters(filters, depth), depth)
    mismatch = param_mismatch(baseline, fgnn)
    log(f"{baseline.name}: {Network(baseline).param_count} params, {fgnn.name}: "
        f"{Network(fgnn).param_count} params ({100 * mismatch:.1f}% apart)")

    base_cfg = config or TrainConfig()
    jobs_list = []
    for spec in (baseline, fgnn):
        spec.save(out / f"{spec.name}.json")
        for seed in seeds:
            cfg = TrainConfig(**{**base_cfg.__dict__, "seed": seed, "epochs": epochs, "dtype": dtype})
            run_dir = out / "runs" / f"{spec.name}-s{seed}"
            if (run_dir / "metrics.csv").exists():
                continue
            jobs_list.append((spec.to_json(), str(data_path), cfg, str(run_dir)))
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            for done in pool.map(_train_job, jobs_list):
                log(f"finished {done}")
    else:
        for job in jobs_list:
            spec = NetworkSpec.from_json(job[0])
            train(spec, dataset, job[2], job[3], log=log)

    records = report(out / "runs", out / "results.csv", out / "figures")
    finals = final_epoch(records)
    med = {name: float(np.median([r.test_top1 for r in finals if r.model == name]))
           for name in (baseline.name, fgnn.name)}

    residuals = []
    for seed in seeds:
        net = load_network(fgnn, out / "runs" / f"{fgnn.name}-s{seed}" / "weights.fgnn")
        residuals.append(check_network_equivariance(net, n_samples=100, tolerance=1e-9, seed=seed).max_residual)

    _, test = dataset.split(base_cfg.test_fraction, base_cfg.split_seed)
    summary = {
        "positions": len(dataset),
        "baseline": baseline.name,
        "fgnn": fgnn.name,
        "param_mismatch": mismatch,
        "median_test_top1": med,
        "random_policy_top1": random_policy_accuracy(test, dataset.header.get("forced_capture", True)),
        "fgnn_trained_residuals": residuals,
        "fgnn_not_worse": med[fgnn.name] >= med[baseline.name] - 0.005,
    }
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=1)
    log(json.dumps(summary, indent=1))
    return summary
