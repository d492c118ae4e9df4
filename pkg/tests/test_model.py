import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rpcir.kg import graph_from_names, with_inverse
from rpcir.model import (
    ModelConfig,
    PathBatch,
    RPCIRModel,
    aggregate_paths,
    collate_graphs,
    encode_path,
    forward,
    gcn_forward,
    path_attention,
    readout,
    score_triple,
)
from rpcir.subgraph import EnclosingSubgraph, extract_enclosing_subgraph
from rpcir.synthetic import planted_rule_split
from rpcir.trainer import ExampleBuilder, TrainConfig, model_gradient_check


def two_node_sub(k=1):
    # edge from node 1 (tail) into node 0 (head) with relation 0
    return EnclosingSubgraph(
        nodes=np.array([10, 11]),
        edges=np.array([[1, 0, 0]]),
        target=(0, 1, 1),
        labels=np.array([[0, 1], [1, 0]]),
        k=k,
    )


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def test_hand_computed_one_dim_layer():
    cfg = ModelConfig(num_layers=1, dim=1, k=1, edge_dropout=0.0)
    m = RPCIRModel(cfg, num_relations=2, num_base_relations=1)
    sub = two_node_sub()
    # features: head [1,0,0,1], tail [0,1,1,0]
    m["input_proj"].data[:] = np.array([[0.5], [0.7], [0.3], [0.2]])
    z_h, z_t = 0.5 + 0.2, 0.7 + 0.3
    m["relation_emb"].data[:] = np.array([[0.4], [-0.6]])
    m["layer0.W_rel"].data[:] = np.array([[[1.5]], [[9.0]]])
    m["layer0.W_self"].data[:] = np.array([[0.8]])
    m["att.W1"].data[:] = np.array([[0.1], [0.2], [0.3], [0.4]])
    m["att.b1"].data[:] = [0.05]
    m["att.W2"].data[:] = [[2.0]]
    m["att.b2"].data[:] = [-0.5]
    r, r_t = 0.4, -0.6
    hidden = max(0.0, 0.1 * z_h + 0.2 * z_t + 0.3 * r + 0.4 * r_t + 0.05)
    alpha = sigmoid(2.0 * hidden - 0.5)
    expected_h = max(0.0, alpha * 1.5 * z_t + 0.8 * z_h)
    expected_t = max(0.0, 0.8 * z_t)
    (z,), (a,) = gcn_forward(m, collate_graphs([sub], [1]), return_attention=True)
    assert a.data[0, 0] == pytest.approx(alpha, abs=1e-15)
    assert z.data[:, 0].tolist() == pytest.approx([expected_h, expected_t], abs=1e-15)


def test_isolated_zero_node_stays_zero():
    cfg = ModelConfig(num_layers=3, dim=4, k=1)
    m = RPCIRModel(cfg, 2, 1, seed=3)
    sub = EnclosingSubgraph(np.array([0]), np.zeros((0, 3), dtype=np.int64), (0, 0, 0), np.array([[0, 0]]), 1)
    layers = gcn_forward(m, collate_graphs([sub], [0], features=[np.zeros((1, 4))]))
    assert all(np.all(z.data == 0) for z in layers)


@pytest.fixture
def small():
    split, _ = planted_rule_split(0)
    g = with_inverse(split.train_graph)
    subs = [extract_enclosing_subgraph(g, t, 2) for t in split.train_targets[:6]]
    return g, subs, [int(t[1]) for t in split.train_targets[:6]]


def test_all_edges_masked_is_self_transform(small):
    g, subs, rels = small
    m = RPCIRModel(ModelConfig(dim=5, k=2), g.num_relations, g.num_base_relations, seed=1)
    masks = [np.zeros(s.num_edges) for s in subs]
    batch = collate_graphs(subs, rels, masks)
    layers = gcn_forward(m, batch, dropout_rate=0.0)
    z = batch.features @ m["input_proj"].data
    for layer, got in enumerate(layers):
        z = np.maximum(z @ m[f"layer{layer}.W_self"].data, 0.0)
        assert np.array_equal(got.data, z)


def test_attention_values_in_open_interval(small):
    g, subs, rels = small
    m = RPCIRModel(ModelConfig(dim=8, k=2), g.num_relations, g.num_base_relations, seed=2)
    _, alphas = gcn_forward(m, collate_graphs(subs, rels), return_attention=True)
    for a in alphas:
        assert np.all((a.data > 0) & (a.data < 1))


def test_batching_matches_single_graphs(small):
    g, subs, rels = small
    m = RPCIRModel(ModelConfig(dim=6, k=2, path_encoder="cnn"), g.num_relations, g.num_base_relations, seed=4)
    from rpcir.paths import enumerate_paths

    paths = [enumerate_paths(s, 3) for s in subs]
    batched = forward(m, collate_graphs(subs, rels), PathBatch(paths))["scores"].data
    single = [score_triple(m, s, p, r) for s, p, r in zip(subs, paths, rels)]
    np.testing.assert_allclose(batched, single, rtol=0, atol=1e-12)


def test_relation_out_of_range_is_a_lookup_error():
    m = RPCIRModel(ModelConfig(dim=2, k=1), 2, 1)
    sub = two_node_sub()
    sub.edges[0, 1] = 5
    with pytest.raises(KeyError):
        gcn_forward(m, collate_graphs([sub], [0]))


def cbow_model():
    m = RPCIRModel(ModelConfig(dim=2, k=1, path_encoder="cbow"), 4, 2)
    m["relation_emb"].data[:] = [[1, 0], [0, 1], [2, 2], [3, -1]]
    return m


def test_cbow_sum_and_order_insensitivity():
    m = cbow_model()
    assert encode_path(m, (0, 1)).tolist() == [1.0, 1.0]
    assert np.array_equal(encode_path(m, (0, 1)), encode_path(m, (1, 0)))


def test_cnn_single_relation_is_its_embedding():
    m = RPCIRModel(ModelConfig(dim=3, k=1, path_encoder="cnn"), 4, 2, seed=5)
    assert np.array_equal(encode_path(m, (2,)), m["relation_emb"].data[2])


def test_cnn_windows_are_position_specific():
    m = RPCIRModel(ModelConfig(dim=2, k=1, path_encoder="cnn", max_path_len=3), 4, 2, seed=6)
    R = m["relation_emb"].data
    W0, b0, W1, b1 = (m[n].data for n in ("cnn.W0", "cnn.b0", "cnn.W1", "cnn.b1"))
    b0[:] = [0.1, -0.2]
    b1[:] = [0.3, 0.4]
    expect2 = np.concatenate([R[0], R[3]]) @ W0 + b0
    expect3 = np.concatenate([R[0], R[3]]) @ W0 + b0 + np.concatenate([R[3], R[1]]) @ W1 + b1
    np.testing.assert_allclose(encode_path(m, (0, 3)), expect2, rtol=0, atol=1e-15)
    np.testing.assert_allclose(encode_path(m, (0, 3, 1)), expect3, rtol=0, atol=1e-15)
    assert not np.allclose(encode_path(m, (0, 3)), encode_path(m, (3, 0)))


def test_empty_path_rejected():
    with pytest.raises(ValueError):
        encode_path(cbow_model(), ())


def test_path_attention_fixtures():
    assert path_attention([[1.0, 2.0]], [0.3, 0.1]).tolist() == [1.0]
    assert path_attention([[1.0, 0.0], [0.0, 1.0]], [2.0, 2.0]).tolist() == [0.5, 0.5]
    beta = path_attention([[math.log(3)], [0.0]], [1.0])
    np.testing.assert_allclose(beta, [0.75, 0.25], atol=1e-15)


def test_aggregate_fixtures():
    np.testing.assert_allclose(aggregate_paths([[2.0, 0.0], [0.0, 2.0]], [math.log(3) / 2, 0.0]), [1.5, 0.5], atol=1e-15)
    assert aggregate_paths([[1.0, 2.0]], [5.0, 5.0]).tolist() == [1.0, 2.0]
    np.testing.assert_allclose(aggregate_paths([[3.0, -1.0]] * 3, [0.2, 0.9]), [3.0, -1.0], atol=1e-15)
    assert aggregate_paths(np.zeros((0, 2)), [1.0, 1.0]).tolist() == [0.0, 0.0]


def test_readout_fixtures():
    assert readout([[1.0, 2.0]]).tolist() == [1.0, 2.0]
    assert readout([[1.0, -2.0], [-1.0, 2.0]]).tolist() == [0.0, 0.0]
    assert readout([[1.0], [2.0], [3.0]]).tolist() == [2.0]


vec_lists = st.integers(1, 6).flatmap(
    lambda n: st.lists(st.lists(st.floats(-3, 3), min_size=3, max_size=3), min_size=n, max_size=n)
)


@settings(max_examples=80, deadline=None)
@given(vec_lists, st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.floats(-5, 5), st.floats(0.1, 5))
def test_attention_invariances(vecs, r_t, shift, scale):
    v = np.asarray(vecs)
    r = np.asarray(r_t)
    beta = path_attention(v, r)
    assert np.all(beta >= 0) and abs(beta.sum() - 1.0) < 1e-9
    # adding c to every dot product: append a coordinate of 1 and give r_T weight c there
    shifted = path_attention(np.hstack([v, np.ones((len(v), 1))]), np.append(r, shift))
    np.testing.assert_allclose(shifted, beta, atol=1e-12)
    scores = v @ r
    if len(scores) > 1 and np.sort(scores)[-1] - np.sort(scores)[-2] > 1e-9:
        assert np.argmax(path_attention(v, scale * r)) == np.argmax(beta)


def score_fixture_model():
    cfg = ModelConfig(num_layers=2, dim=1, k=1)
    m = RPCIRModel(cfg, 2, 1)
    m["relation_emb"].data[:] = [[0.5], [0.0]]
    return m


def test_zero_scorer_gives_zero(small):
    g, subs, rels = small
    m = RPCIRModel(ModelConfig(dim=4, k=2), g.num_relations, g.num_base_relations, seed=7)
    m["score.W"].data[:] = 0.0
    assert np.all(forward(m, collate_graphs(subs, rels), None)["scores"].data == 0)


def test_scorer_is_linear_in_ws(small):
    g, subs, rels = small
    m = RPCIRModel(ModelConfig(dim=4, k=2), g.num_relations, g.num_base_relations, seed=8)
    batch = collate_graphs(subs, rels)
    f1 = forward(m, batch, None)["scores"].data.copy()
    m["score.W"].data *= 2.0
    np.testing.assert_allclose(forward(m, batch, None)["scores"].data, 2.0 * f1, rtol=1e-14)


def test_one_dim_score_fixture():
    m = score_fixture_model()
    m["score.W"].data[:] = 1.0
    sub = two_node_sub()
    batch = collate_graphs([sub], [0], features=[np.zeros((2, 4))])
    assert forward(m, batch, None)["scores"].data.tolist() == [0.5]


@pytest.mark.parametrize("encoder", ["cbow", "cnn"])
def test_full_model_gradient_check(encoder):
    split, _ = planted_rule_split(1)
    mcfg = ModelConfig(dim=3, num_layers=2, k=2, path_encoder=encoder)
    tcfg = TrainConfig(margin=10.0)
    builder = ExampleBuilder(split.train_graph, mcfg, tcfg)
    g = builder.g
    m = RPCIRModel(mcfg, g.num_relations, g.num_base_relations, seed=9)
    examples = [builder.build(i, split.train_targets[i], 0) for i in range(2)]
    rep = model_gradient_check(m, examples, tcfg)
    assert rep["passed"], {k: v for k, v in rep["params"].items() if not v["passed"]}


def test_parameter_names_unique_and_shapes():
    m = RPCIRModel(ModelConfig(path_encoder="cnn"), 14, 7)
    assert m["relation_emb"].shape == (14, 32)
    assert m["layer2.W_rel"].shape == (14, 32, 32)
    assert m["att.W1"].shape == (128, 32)
    assert m["score.W"].shape == (32 + 6 * 32 + 64, 1)
    assert {"cnn.W0", "cnn.W1", "cnn.b0", "cnn.b1"} <= set(m.params)
    assert all(np.all(m[n].data == 0) for n in m.params if ".b" in n)
    bound = np.sqrt(6 / (14 + 32))
    assert np.abs(m["relation_emb"].data).max() <= bound


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(edge_dropout=1.0)
    with pytest.raises(ValueError):
        ModelConfig(dim=0)
    with pytest.raises(ValueError):
        ModelConfig(path_encoder="lstm")
