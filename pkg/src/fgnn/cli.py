"""Command-line entry point: ``fgnn <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import checkers
from .experiments import report, run_desk_experiment
from .groups import load_group, verify_axioms
from .networks import (
    Network,
    NetworkSpec,
    build_baseline_cnn,
    build_fgnn_cnn,
    build_mini_unet,
    check_network_equivariance,
)
from .training import MetricsRecord, TrainConfig, evaluate, load_network, metrics_csv, train


def cmd_verify_group(args) -> int:
    report_ = verify_axioms(load_group(args.file))
    print(report_.format())
    return 0 if report_.passed else 1


def cmd_check_equivariance(args) -> int:
    spec = NetworkSpec.load(args.spec)
    net = load_network(spec, args.weights) if args.weights else Network(spec, seed=args.seed)
    group = load_group(args.group) if args.group else net.group
    rep = check_network_equivariance(net, group, args.output_action or "auto", args.samples, args.tol, args.seed)
    print(rep.format())
    return 0 if rep.passed else 1


def cmd_gen_dataset(args) -> int:
    ds = checkers.gen_synthetic_dataset(args.seed, args.games, not args.no_forced_capture, args.policy,
                                        args.max_positions)
    ds.save(args.out)
    print(f"wrote {len(ds)} positions from {len(set(ds.game_ids()))} games to {args.out}")
    return 0


def cmd_build_spec(args) -> int:
    if args.kind == "baseline":
        spec = build_baseline_cnn(args.filters, args.depth)
    elif args.kind == "fgnn":
        spec = build_fgnn_cnn(args.filters, args.depth, args.group or "flip")
    else:
        group = args.group or "trivial"
        if group.endswith(".json"):
            group = json.loads(Path(group).read_text())
        spec = build_mini_unet(group, args.levels, args.filters, args.size)
    spec.save(args.out)
    print(f"wrote {spec.name} ({Network(spec).param_count} params) to {args.out}")
    return 0


def cmd_train(args) -> int:
    spec = NetworkSpec.load(args.spec)
    config = TrainConfig.load(args.config) if args.config else TrainConfig()
    dataset = checkers.Dataset.load(args.data)
    _, records = train(spec, dataset, config, args.out, log=None if args.quiet else print)
    print(f"wrote {args.out}/weights.fgnn and {args.out}/metrics.csv")
    rep = check_network_equivariance(load_network(spec, Path(args.out) / "weights.fgnn"), n_samples=20)
    if not rep.passed:
        print(rep.format())
        return 1
    return 0


def cmd_eval(args) -> int:
    spec = NetworkSpec.load(args.spec)
    net = load_network(spec, args.weights)
    dataset = checkers.Dataset.load(args.data)
    if args.split == "test":
        _, dataset = dataset.split(args.test_fraction, args.split_seed)
    top1, top3 = evaluate(net, dataset)
    rec = MetricsRecord(spec.name, spec.group_name, net.param_count, -1, 0, float("nan"), float("nan"), top1, top3)
    sys.stdout.write(metrics_csv([rec]))
    return 0


def cmd_report(args) -> int:
    figures = None if args.no_figures else (args.figures or str(Path(args.out).with_suffix("")) + "_figures")
    records = report(args.runs, args.out, figures)
    print(f"wrote {len(records)} rows to {args.out}" + (f", figures in {figures}" if figures else ""))
    return 0


def cmd_experiment(args) -> int:
    summary = run_desk_experiment(args.out, args.positions, args.seeds, args.filters, args.depth, args.epochs,
                                  args.dtype, args.data_seed, args.jobs)
    ok = summary["fgnn_not_worse"] and max(summary["fgnn_trained_residuals"]) < 1e-9
    return 0 if ok else 1


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="fgnn", description="Finite-group equivariant networks toolkit")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("verify-group", help="check group axioms of a JSON group definition")
    s.add_argument("file")
    s.set_defaults(fn=cmd_verify_group)

    s = sub.add_parser("check-equivariance", help="certify N(gX) = g'N(X) on random inputs")
    s.add_argument("--spec", required=True)
    s.add_argument("--group")
    s.add_argument("--weights")
    s.add_argument("--samples", type=int, default=100)
    s.add_argument("--tol", type=float, default=1e-9)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output-action", choices=["policy", "spatial", "identity"])
    s.set_defaults(fn=cmd_check_equivariance)

    s = sub.add_parser("gen-dataset", help="synthetic checkers positions from random playouts")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--games", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--max-positions", type=int)
    s.add_argument("--policy", choices=["heuristic", "uniform"], default="heuristic")
    s.add_argument("--no-forced-capture", action="store_true")
    s.set_defaults(fn=cmd_gen_dataset)

    s = sub.add_parser("build-spec", help="write a network spec JSON")
    s.add_argument("kind", choices=["baseline", "fgnn", "unet"])
    s.add_argument("--filters", type=int, default=10)
    s.add_argument("--depth", type=int, default=10)
    s.add_argument("--levels", type=int, default=2)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--group", help="named group (trivial, flip, klein, d8) or a group JSON file")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_build_spec)

    s = sub.add_parser("train", help="train a network spec on a dataset")
    s.add_argument("--spec", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval", help="top-1/top-3 accuracy of trained weights")
    s.add_argument("--weights", required=True)
    s.add_argument("--spec", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", choices=["test", "all"], default="test")
    s.add_argument("--test-fraction", type=float, default=0.1)
    s.add_argument("--split-seed", type=int, default=0)
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("report", help="merge run metrics into one CSV and draw figures")
    s.add_argument("--runs", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--figures")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(fn=cmd_report)

    s = sub.add_parser("experiment", help="desk-scale CNN vs FGNN-CNN comparison")
    s.add_argument("--out", required=True)
    s.add_argument("--positions", type=int, default=50_000)
    s.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    s.add_argument("--filters", type=int, default=10)
    s.add_argument("--depth", type=int, default=10)
    s.add_argument("--epochs", type=int, default=5)
    s.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    s.add_argument("--data-seed", type=int, default=0)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(fn=cmd_experiment)

    args = p.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
