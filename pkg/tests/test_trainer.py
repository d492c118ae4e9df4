import json
import math

import numpy as np
import pytest

from rpcir import trainer as tr
from rpcir.autodiff import Parameter
from rpcir.kg import graph_from_names, with_inverse
from rpcir.model import ModelConfig, RPCIRModel
from rpcir.synthetic import planted_rule_split
from rpcir.trainer import (
    Adam,
    ExampleBuilder,
    NumericError,
    SamplingError,
    TrainConfig,
    batch_objective,
    default_lambdas,
    loss_margin,
    loss_path_contrast,
    loss_supervised,
    negative_triple_paths,
    sample_negative_triple,
    total_loss,
    train,
)


def val(t):
    return float(np.asarray(t.data).reshape(-1)[0])


def test_margin_fixtures():
    assert val(loss_margin(5.0, 1.0, 10.0)) == 6.0
    assert val(loss_margin(25.0, 1.0, 10.0)) == 0.0
    assert val(loss_margin(3.0, 3.0, 10.0)) == 10.0


def test_contrast_fixtures():
    r = np.array([1.0, 0.0])
    assert val(loss_path_contrast([2.0, 5.0], [2.0, -1.0], r)) == pytest.approx(math.log(2), abs=1e-12)
    assert val(loss_path_contrast([1.0, 0.0], [0.0, 0.0], r)) == pytest.approx(0.313262, abs=1e-6)
    assert val(loss_path_contrast([800.0, 0.0], [0.0, 0.0], r)) == pytest.approx(0.0, abs=1e-300)
    assert math.isfinite(val(loss_path_contrast([-800.0, 0.0], [0.0, 0.0], r)))


def test_contrast_monotone_in_gap():
    r = np.array([1.0])
    gaps = np.linspace(-5, 5, 41)
    losses = [val(loss_path_contrast([g], [0.0], r)) for g in gaps]
    assert all(a > b for a, b in zip(losses, losses[1:]))
    assert all(x >= 0 for x in losses)
    assert all((x <= math.log(2) + 1e-15) == (g >= 0) for x, g in zip(losses, gaps))


def test_supervised_fixtures():
    assert val(loss_supervised([0.3, 0.7], np.array([[1.0, 2.0]]), 0)) == pytest.approx(0.0, abs=1e-15)
    table = np.tile([1.0, 1.0], (9, 1))
    assert val(loss_supervised([0.5, 0.5], table, 4)) == pytest.approx(math.log(9), abs=1e-12)
    table = np.array([[2.0], [0.0], [0.0]])
    assert val(loss_supervised([1.0], table, 0)) == pytest.approx(0.2395, abs=5e-5)
    with pytest.raises(ValueError):
        loss_supervised([1.0], table, 3)


def test_total_loss_fixtures():
    assert total_loss(6.0, 0.7, 2.2, 0.0, 0.0) == 6.0
    assert total_loss(6.0, 0.7, 2.2, 1.0, 1.2) == pytest.approx(9.34, abs=1e-12)
    assert total_loss(6.0, 123.0, 2.2, 1.0, 1.2, "no_contrasts") == pytest.approx(6.0 + 1.2 * 2.2)
    assert total_loss(6.0, 0.7, 2.2, 1.0, 1.2, "no_paths") == 6.0
    with pytest.raises(ValueError):
        total_loss(1.0, 1.0, 1.0, 1.0, 1.0, "nope")


def test_default_lambdas():
    assert default_lambdas("WN18RR_v1") == (1.0, 1.2)
    assert default_lambdas("fb15k-237_v2") == (0.8, 0.8)
    assert default_lambdas("nell-995_v1") == (1.0, 1.0)


def test_config_validation():
    for bad in ({"margin": 0}, {"lambda1": -1}, {"batch_size": 0}, {"ablation": "x"}, {"negative_paths": "x"}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_two_entity_negatives_enumerated():
    g = graph_from_names([("a", "r", "b")])
    seen = {tuple(sample_negative_triple(g, (0, 0, 1), np.random.default_rng(s))) for s in range(200)}
    assert seen == {(1, 0, 1), (0, 0, 0)}


def test_negatives_never_known_and_seeded():
    split, _ = planted_rule_split(0)
    g = split.train_graph
    e = split.train_targets[0]
    a = [sample_negative_triple(g, e, np.random.default_rng([7, i])) for i in range(100)]
    b = [sample_negative_triple(g, e, np.random.default_rng([7, i])) for i in range(100)]
    assert a == b
    assert not any(n in g for n in a)
    assert all(n.relation == e.relation and (n.head == e.head or n.tail == e.tail) for n in a)


def test_negative_sampling_exhaustion():
    g = graph_from_names([("a", "r", "b"), ("a", "r", "a"), ("b", "r", "b"), ("b", "r", "a")])
    with pytest.raises(SamplingError):
        sample_negative_triple(g, (0, 0, 1), np.random.default_rng(0))
    single = graph_from_names([("a", "r", "a")])
    with pytest.raises(SamplingError):
        sample_negative_triple(single, (0, 0, 0), np.random.default_rng(0))


def test_negative_path_modes():
    rng = np.random.default_rng(0)
    assert negative_triple_paths("positive_corruptions", [(0,)], [(5, 1)], 6, rng) == [(5, 1)]
    out = negative_triple_paths("corrupted_subgraph", [(0, 1)], [(5, 1)], 6, rng)
    assert len(out) == 1 and out[0] != (0, 1)
    assert negative_triple_paths("corrupted_subgraph", [], [(5, 1)], 6, rng) == []


def test_adam_lr_zero_keeps_params():
    p = {"w": Parameter(np.arange(3.0), "w")}
    before = p["w"].data.copy()
    Adam(p, lr=0.0).step({"w": np.array([1.0, -2.0, 3.0])})
    assert np.array_equal(p["w"].data, before)


def test_adam_first_step_is_signed_lr():
    p = {"w": Parameter(np.zeros(3), "w")}
    Adam(p, lr=0.01).step({"w": np.array([2.0, -0.5, 0.0])})
    np.testing.assert_allclose(p["w"].data, [-0.01, 0.01, 0.0], atol=1e-9)


@pytest.fixture(scope="module")
def setup():
    split, _ = planted_rule_split(0)
    mcfg = ModelConfig(dim=4, num_layers=2, k=2)
    return split, mcfg


def examples_for(split, mcfg, tcfg, n=6):
    b = ExampleBuilder(split.train_graph, mcfg, tcfg)
    return b, [b.build(i, split.train_targets[i], 0) for i in range(n)]


def test_examples_are_reproducible(setup):
    split, mcfg = setup
    tcfg = TrainConfig(seed=3)
    _, a = examples_for(split, mcfg, tcfg)
    _, b = examples_for(split, mcfg, tcfg)
    for x, y in zip(a, b):
        assert x.describe() == y.describe()
        assert np.array_equal(x.pos_mask, y.pos_mask)
    g = with_inverse(split.train_graph)
    assert all(ex.neg_triple not in g for ex in a)


def test_no_paths_loss_ignores_paths(setup):
    split, mcfg = setup
    tcfg = TrainConfig(ablation="no_paths")
    b, exs = examples_for(split, mcfg, tcfg)
    g = b.g
    m = RPCIRModel(mcfg, g.num_relations, g.num_base_relations, seed=1)
    base = batch_objective(m, exs, tcfg)
    rng = np.random.default_rng(0)
    for ex in exs:
        ex.pos_paths = [tuple(rng.integers(g.num_relations, size=2).tolist())] + list(reversed(ex.pos_paths))
        ex.neg_paths = list(reversed(ex.neg_paths))
        ex.contrast_negatives = [(0,)]
    again = batch_objective(m, exs, tcfg)
    assert val(again["loss"]) == val(base["loss"])
    assert val(base["L_N"]) == 0.0 and val(base["L_C"]) == 0.0


def test_pathless_positives_contribute_no_path_loss(setup):
    split, mcfg = setup
    tcfg = TrainConfig()
    b, exs = examples_for(split, mcfg, tcfg, n=2)
    g = b.g
    m = RPCIRModel(mcfg, g.num_relations, g.num_base_relations, seed=1)
    for ex in exs:
        ex.pos_paths, ex.contrast_negatives = [], []
    out = batch_objective(m, exs, tcfg)
    assert val(out["L_N"]) == 0.0 and val(out["L_C"]) == 0.0
    assert val(out["loss"]) == val(out["L_G"])


def test_losses_nonnegative(setup):
    split, mcfg = setup
    tcfg = TrainConfig(lambda1=0.7, lambda2=1.3)
    b, exs = examples_for(split, mcfg, tcfg)
    m = RPCIRModel(mcfg, b.g.num_relations, b.g.num_base_relations, seed=2)
    out = {k: val(v) for k, v in batch_objective(m, exs, tcfg).items()}
    assert min(out.values()) >= 0
    assert out["loss"] == pytest.approx(out["L_G"] + 0.7 * out["L_N"] + 1.3 * out["L_C"], rel=1e-14)


def test_zero_epochs_returns_initial_params(setup, tmp_path):
    split, mcfg = setup
    tcfg = TrainConfig(epochs=0, seed=5)
    res = train(split, mcfg, tcfg, output_dir=tmp_path)
    g = with_inverse(split.train_graph)
    fresh = RPCIRModel(mcfg, g.num_relations, g.num_base_relations, seed=5)
    assert res.log == []
    assert all(np.array_equal(res.model[k].data, fresh[k].data) for k in fresh.params)
    assert (tmp_path / "train_log.jsonl").read_text() == ""
    assert (tmp_path / "checkpoint.json").exists()


def test_short_run_is_deterministic_and_logged(setup, tmp_path):
    split, mcfg = setup
    tcfg = TrainConfig(epochs=2, seed=1)
    for d in ("a", "b"):
        train(split, mcfg, tcfg, output_dir=tmp_path / d)
    for name in ("checkpoint.json", "train_log.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = [json.loads(line) for line in (tmp_path / "a" / "train_log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in rows] == [0, 1]
    assert set(rows[0]) == {"epoch", "train_loss", "L_G", "L_N", "L_C", "valid_auc_pr"}
    timing = [json.loads(line) for line in (tmp_path / "a" / "timing.jsonl").read_text().splitlines()]
    assert len(timing) == 2 and all(t["seconds"] >= 0 for t in timing)


def test_threads_do_not_change_results(setup):
    split, mcfg = setup
    one = train(split, mcfg, TrainConfig(epochs=1, seed=2, threads=1)).model.state()
    four = train(split, mcfg, TrainConfig(epochs=1, seed=2, threads=4)).model.state()
    assert all(np.array_equal(one[k], four[k]) for k in one)


def test_checkpoint_round_trip(setup, tmp_path):
    split, mcfg = setup
    res = train(split, mcfg, TrainConfig(epochs=1), output_dir=tmp_path)
    model, meta = tr.load_checkpoint(tmp_path / "checkpoint.json")
    assert meta["model_config"] == mcfg.to_dict()
    assert all(np.array_equal(model[k].data, res.model[k].data) for k in model.params)


def test_non_finite_loss_aborts_with_dump(setup, tmp_path, monkeypatch):
    split, mcfg = setup
    real = tr.batch_objective

    def poisoned(model, examples, cfg, dropout=True):
        out = real(model, examples, cfg, dropout)
        out["loss"].data = np.asarray(np.nan)
        return out

    monkeypatch.setattr(tr, "batch_objective", poisoned)
    with pytest.raises(NumericError):
        train(split, mcfg, TrainConfig(epochs=1), output_dir=tmp_path)
    dump = json.loads((tmp_path / "nonfinite_dump.json").read_text())
    assert dump["epoch"] == 0 and dump["examples"]
