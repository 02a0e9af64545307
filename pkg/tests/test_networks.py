import numpy as np
import pytest

from fgnn import checkers as C
from fgnn.engine import Graph, ShapeMismatch
from fgnn.equivariant import StackedTensor, t_apply
from fgnn.groups import flip_group
from fgnn.networks import (
    IndivisibleSpatial,
    InvalidSpec,
    Network,
    NetworkSpec,
    UnsupportedGroup,
    build_baseline_cnn,
    build_fgnn_cnn,
    build_mini_unet,
    check_network_equivariance,
    cnn_param_count,
    matched_fgnn_filters,
    mirror_consistency,
    without_merges,
)
from fgnn.training import (
    CSV_COLUMNS,
    EmptyDataset,
    MetricsRecord,
    TrainConfig,
    evaluate,
    load_network,
    metrics_csv,
    read_metrics,
    topk_hits,
    train,
)

from conftest import fd_check


@pytest.mark.parametrize("filters,depth", [(8, 10), (10, 10), (1, 1), (3, 4)])
def test_param_count_closed_form(filters, depth):
    base = Network(build_baseline_cnn(filters, depth))
    assert base.param_count == cnn_param_count(filters, depth)
    # enumeration: k^2 c_in c_out + c_out per conv
    chans = [1] + [filters] * depth + [4]
    assert base.param_count == sum(9 * a * b + b for a, b in zip(chans, chans[1:]))
    fg = Network(build_fgnn_cnn(filters, depth))
    assert fg.param_count == cnn_param_count(filters, depth, fgnn=True)


def test_fgnn_matched_within_ten_percent():
    f = matched_fgnn_filters(10)
    a, b = cnn_param_count(10), cnn_param_count(f, fgnn=True)
    assert abs(a - b) / a < 0.10


def test_minimal_net_outputs_distribution():
    net = Network(build_baseline_cnn(1, depth=1))
    x = np.random.default_rng(0).integers(-1, 2, (5, 1, 8, 8)).astype(float)
    p = net.predict(x)
    assert p.shape == (5, 128)
    assert np.abs(p.sum(axis=1) - 1).max() < 1e-12


def test_fgnn_head_channel_order():
    net = Network(build_fgnn_cnn(2, depth=2))
    assert net.shapes["drop"] == (4, 8, 8)
    # slice swap of the stacked head equals the dense policy reflection
    x = np.random.default_rng(0).standard_normal((3, 1, 8, 8))
    head = net.forward(x)["head"].data
    moved = t_apply(StackedTensor(head, net.group), 1).data
    assert np.array_equal(moved, C.reflect_policy(head))


def test_fgnn_equivariant_at_init():
    net = Network(build_fgnn_cnn(4, depth=3), seed=3)
    assert check_network_equivariance(net, n_samples=20).max_residual < 1e-9


def test_baseline_negative_control():
    net = Network(build_baseline_cnn(4, depth=3))
    rep = check_network_equivariance(net, flip_group(), "policy", n_samples=20)
    assert rep.max_residual > 1e-2
    assert not rep.passed


def test_trivial_group_residual_is_zero():
    net = Network(build_baseline_cnn(3, depth=2))
    assert check_network_equivariance(net, n_samples=10).max_residual == 0.0


def test_fgnn_requires_flip_group():
    with pytest.raises(UnsupportedGroup):
        build_fgnn_cnn(4, group="klein")


@pytest.mark.parametrize("group", ["trivial", "flip", "klein", "d8"])
def test_unet_equivariant(group):
    net = Network(build_mini_unet(group, base_filters=8, size=16), seed=1)
    rep = check_network_equivariance(net, n_samples=4)
    assert rep.max_residual < 1e-9, rep.format()


def test_unet_without_merges_equivariant():
    spec = without_merges(build_mini_unet("d8", size=16))
    assert not any(n["op"] == "merge" for n in spec.nodes)
    assert check_network_equivariance(Network(spec), n_samples=3).max_residual < 1e-9


def test_unet_param_ratio():
    counts = {g: Network(build_mini_unet(g, base_filters=8)).param_count for g in ("trivial", "flip", "klein", "d8")}
    for g, order in (("flip", 2), ("klein", 4), ("d8", 8)):
        ratio = counts[g] / counts["trivial"]
        assert 0.7 / order < ratio < 1.3 / order


def test_unet_indivisible_size():
    with pytest.raises(IndivisibleSpatial):
        build_mini_unet("flip", levels=2, size=30)


def test_unet_output_is_per_pixel_probability():
    net = Network(build_mini_unet("flip", size=16))
    y = net.predict(np.random.default_rng(0).standard_normal((2, 1, 16, 16)))
    assert y.shape == (2, 1, 16, 16)
    assert ((y > 0) & (y < 1)).all()


def test_spec_json_roundtrip(tmp_path):
    spec = build_fgnn_cnn(3, depth=2)
    spec.save(tmp_path / "s.json")
    back = NetworkSpec.load(tmp_path / "s.json")
    a, b = Network(spec, seed=5), Network(back, seed=5)
    x = np.random.default_rng(0).standard_normal((2, 1, 8, 8))
    assert np.array_equal(a.predict(x), b.predict(x))


def test_spec_validation():
    spec = build_baseline_cnn(2, depth=1)
    spec.nodes[1]["inputs"] = ["nowhere"]
    with pytest.raises(InvalidSpec):
        Network(spec)


def test_forward_rejects_wrong_input():
    with pytest.raises(ShapeMismatch):
        Network(build_baseline_cnn(2, depth=1)).forward(np.zeros((1, 1, 6, 6)))


def test_wrapped_network_gradients():
    net = Network(build_fgnn_cnn(2, depth=2), seed=0)
    rng = np.random.default_rng(1)
    for k in net.params:
        net.params[k] = rng.standard_normal(net.params[k].shape) * 0.5
    x = rng.standard_normal((2, 1, 8, 8))

    def fn(g, xt):
        if g is None:
            return net.forward(xt.data)["mask"]
        return net.forward(xt.data, g)["mask"]

    # forward re-enters the input, so only parameter gradients are checked
    err = fd_check(fn, net.params, x, max_entries=30, check_input=False)
    assert err < 1e-6


def test_topk_hits():
    logits = np.eye(128)[[3, 7, 9]]
    labels = np.array([3, 7, 9])
    assert topk_hits(logits, labels, 1).all() and topk_hits(logits, labels, 3).all()
    # ties resolve to the lowest index
    assert topk_hits(np.zeros((1, 128)), np.array([0]), 1).all()
    assert not topk_hits(np.zeros((1, 128)), np.array([5]), 3).any()


def test_uniform_predictor_top1_is_one_in_128():
    labels = np.random.default_rng(0).integers(0, 128, 20_000)
    rate = topk_hits(np.zeros((len(labels), 128)), labels, 1).mean()
    assert abs(rate - 1 / 128) < 0.003


@pytest.fixture(scope="module")
def small_data():
    return C.gen_synthetic_dataset(0, 12)


def test_evaluate_perfect_predictor(small_data):
    class Perfect:
        dtype = np.float64

        def logits(self, x, batch_size=512):
            return np.eye(128)[small_data.labels()]

    assert evaluate(Perfect(), small_data) == (1.0, 1.0)


def test_zero_lr_gives_constant_metrics(small_data):
    cfg = TrainConfig(lr=0.0, epochs=3, batch_size=32)
    _, recs = train(build_baseline_cnn(2, depth=1), small_data, cfg)
    assert len({(r.test_top1, r.test_top3, r.train_loss) for r in recs}) == 1
    assert all(r.test_top3 >= r.test_top1 for r in recs)


def test_train_writes_artifacts(tmp_path, small_data):
    cfg = TrainConfig(epochs=1, batch_size=64)
    net, recs = train(build_fgnn_cnn(2, depth=2), small_data, cfg, tmp_path)
    assert {p.name for p in tmp_path.iterdir()} == {"weights.fgnn", "metrics.csv", "spec.json", "config.json"}
    assert [r.row() for r in read_metrics(tmp_path / "metrics.csv")] == [r.row() for r in recs]
    loaded = load_network(net.spec, tmp_path / "weights.fgnn")
    assert check_network_equivariance(loaded, n_samples=10).passed


def test_load_network_shape_mismatch(tmp_path, small_data):
    train(build_baseline_cnn(2, depth=1), small_data, TrainConfig(epochs=1), tmp_path)
    with pytest.raises(ShapeMismatch):
        load_network(build_baseline_cnn(3, depth=1), tmp_path / "weights.fgnn")


def test_empty_dataset():
    with pytest.raises(EmptyDataset):
        train(build_baseline_cnn(2, depth=1), C.Dataset([]), TrainConfig())


def test_metrics_csv_columns():
    rec = MetricsRecord("cnn-f2", "trivial", 10, 0, 1, 0.5, 0.25, 0.125, 0.5)
    text = metrics_csv([rec])
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    assert text.splitlines()[1] == "cnn-f2,trivial,10,0,1,0.50000000,0.25000000,0.12500000,0.50000000,0"


def test_mirror_consistency_fgnn_and_baseline():
    boards = C.random_positions(200, seed=1)
    fg = mirror_consistency(Network(build_fgnn_cnn(3, depth=2), seed=0), boards)
    assert fg["violations"] == 0 and fg["checked"] > 150
    base = mirror_consistency(Network(build_baseline_cnn(4, depth=2), seed=0), boards)
    assert base["violations"] > 0


def test_train_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        TrainConfig.from_json({"lr": 0.1, "momentun": 0.9})


def test_graph_param_reads_store():
    net = Network(build_baseline_cnn(2, depth=1))
    g = Graph(net.params)
    assert np.array_equal(g.param("head.w").data, net.params["head.w"])
