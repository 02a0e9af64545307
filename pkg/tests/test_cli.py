import csv
import json

import pytest

from fgnn.cli import main
from fgnn.experiments import param_mismatch, random_policy_accuracy
from fgnn.checkers import Dataset
from fgnn.networks import build_baseline_cnn, build_fgnn_cnn


def test_verify_group(tmp_path, capsys):
    path = tmp_path / "d8.json"
    path.write_text(json.dumps({"generators": [{"spatial": "rot90"}, {"spatial": "flip-h"}]}))
    assert main(["verify-group", str(path)]) == 0
    out = capsys.readouterr().out
    assert "order 8" in out and "associativity (512 cases)" in out


def test_build_spec_and_check(tmp_path, capsys):
    fg, base = tmp_path / "fg.json", tmp_path / "base.json"
    assert main(["build-spec", "fgnn", "--filters", "3", "--depth", "2", "--out", str(fg)]) == 0
    assert main(["build-spec", "baseline", "--filters", "3", "--depth", "2", "--out", str(base)]) == 0
    assert main(["check-equivariance", "--spec", str(fg), "--samples", "10"]) == 0
    group = tmp_path / "flip.json"
    group.write_text(json.dumps({"generators": [{"spatial": "flip-h"}]}))
    # an ordinary CNN checked against the flip group fails with a nonzero exit code
    rc = main(["check-equivariance", "--spec", str(base), "--group", str(group), "--samples", "10",
               "--output-action", "policy"])
    assert rc == 1
    assert "FAIL" in capsys.readouterr().out


def test_unet_spec(tmp_path):
    out = tmp_path / "u.json"
    assert main(["build-spec", "unet", "--group", "klein", "--filters", "8", "--size", "16", "--out", str(out)]) == 0
    assert main(["check-equivariance", "--spec", str(out), "--samples", "3"]) == 0


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen-dataset", "--seed", "0", "--games", "8", "--out", str(d / "data.jsonl")]) == 0
    assert main(["build-spec", "fgnn", "--filters", "2", "--depth", "2", "--out", str(d / "fg.json")]) == 0
    assert main(["build-spec", "baseline", "--filters", "3", "--depth", "2", "--out", str(d / "cnn.json")]) == 0
    (d / "cfg.json").write_text(json.dumps({"epochs": 2, "batch_size": 32, "seed": 1}))
    for name in ("fg", "cnn"):
        rc = main(["train", "--spec", str(d / f"{name}.json"), "--data", str(d / "data.jsonl"),
                   "--config", str(d / "cfg.json"), "--out", str(d / "runs" / name), "--quiet"])
        assert rc == 0
    return d


def test_gen_dataset_is_legal(workdir):
    ds = Dataset.load(workdir / "data.jsonl")
    assert len(ds) > 100 and ds.validate() == 0


def test_eval(workdir, capsys):
    capsys.readouterr()
    rc = main(["eval", "--weights", str(workdir / "runs" / "fg" / "weights.fgnn"), "--spec", str(workdir / "fg.json"),
               "--data", str(workdir / "data.jsonl")])
    assert rc == 0
    rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    assert len(rows) == 1 and 0 <= float(rows[0]["test_top1"]) <= float(rows[0]["test_top3"]) <= 1


def test_report(workdir):
    out = workdir / "results.csv"
    assert main(["report", "--runs", str(workdir / "runs"), "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["model"] for r in rows] == ["cnn-f3", "cnn-f3", "fgnn-f2", "fgnn-f2"]
    figs = workdir / "results_figures"
    assert {p.name for p in figs.iterdir()} == {"accuracy.png", "overfitting.png", "learning_curves.png"}


def test_trained_weights_stay_equivariant(workdir):
    rc = main(["check-equivariance", "--spec", str(workdir / "fg.json"),
               "--weights", str(workdir / "runs" / "fg" / "weights.fgnn"), "--samples", "20"])
    assert rc == 0


def test_small_experiment(tmp_path):
    rc = main(["experiment", "--out", str(tmp_path), "--positions", "800", "--seeds", "0", "--filters", "3",
               "--depth", "2", "--epochs", "1", "--dtype", "float64"])
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert rc == (0 if summary["fgnn_not_worse"] else 1)
    assert max(summary["fgnn_trained_residuals"]) < 1e-9
    assert (tmp_path / "results.csv").exists() and (tmp_path / "figures" / "accuracy.png").exists()
    assert 0 < summary["random_policy_top1"] < 1


def test_param_mismatch_and_random_baseline():
    assert param_mismatch(build_baseline_cnn(10), build_fgnn_cnn(7)) < 0.1
    from fgnn.checkers import gen_synthetic_dataset
    ds = gen_synthetic_dataset(0, 2)
    assert 0.1 < random_policy_accuracy(ds) < 1.0


def test_unknown_subcommand():
    with pytest.raises(SystemExit):
        main(["nope"])
