from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dshgt import tensor as T
from dshgt.diagnostics import random_graph
from dshgt.errors import GraphError
from dshgt.model import (DshgtModel, GraphArrays, ModelConfig, aggregate, attention_weights,
                         fuse, fused_loss, homogeneous_mode, make_batch, messages)
from dshgt.tensor import Tensor
from oracles import hgt_layer

E = 3
SMALL = dict(in_dim=6, d=8, heads=2, layers=1, dropout=0.0, num_node_types=3, num_relations=2 * E)


def small_model(seed=0, **over):
    model = DshgtModel(ModelConfig(**{**SMALL, **over}), seed=seed)
    rng = np.random.default_rng(seed + 100)
    for name, p in model.params.items():
        if name.endswith(".mu"):
            p.data = rng.uniform(0.5, 1.5, p.shape).astype(np.float32)
    return model


def layer_params(model, i=0):
    return {k: model.params[f"layers.{i}.{k}"].data for k in ("q", "k", "v", "a", "w_att", "w_msg", "mu")}


def forward_edges(g: GraphArrays):
    return list(zip(g.src[0::2].tolist(), g.tgt[0::2].tolist(), g.rel[0::2].tolist()))


def chain(n_nodes, types, edges, features=None, in_dim=6):
    """GraphArrays from explicit ``(src, dst, edge_type)`` edges."""
    src, tgt, rel = [], [], []
    for s, t, k in edges:
        src += [s, t]
        tgt += [t, s]
        rel += [k, E + k]
    if features is None:
        features = np.zeros((n_nodes, in_dim), np.float32)
    return GraphArrays(np.arange(n_nodes), np.array(types), np.array(src, dtype=np.int64),
                       np.array(tgt, dtype=np.int64), np.array(rel, dtype=np.int64), features)


@settings(max_examples=30)
@given(st.integers(4, 8), st.integers(0, 2**31), st.sampled_from(["sum", "mean"]))
def test_layer_matches_brute_force(n, seed, aggregation):
    model = small_model(seed % 1000, aggregation=aggregation)
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, 6, 3, E)
    H = rng.standard_normal((n, 8)).astype(np.float32)
    att, msg, H_new = hgt_layer(H, g.types.tolist(), forward_edges(g), E, layer_params(model), 2,
                                aggregation)
    layer = model.layers[0]
    for t in range(n):
        assert np.allclose(attention_weights(layer, g, H, t), att[t], atol=1e-5)
        assert np.allclose(messages(layer, g, H, t), msg[t], atol=1e-5)
        assert np.allclose(aggregate(layer, g, H, t), H_new[t], atol=1e-5)


@given(st.integers(2, 12), st.integers(0, 2**31))
def test_attention_sums_to_one(n, seed):
    model = small_model(seed % 7)
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, 6, 3, E, n_edges=int(rng.integers(n - 1, 3 * n)))
    batch = make_batch([g])
    H = Tensor(rng.standard_normal((n, 8)) * 3)
    att = model.layers[0].attention(H, batch).data
    sums = batch.targets.sum(att.astype(np.float64))
    has = batch.targets.counts > 0
    assert np.all(np.abs(sums[has] - 1.0) <= 1e-5)


def test_single_source_gets_full_attention():
    model = small_model()
    g = chain(2, [0, 1], [(0, 1, 2)])
    H = np.random.default_rng(0).standard_normal((2, 8)).astype(np.float32)
    assert np.array_equal(attention_weights(model.layers[0], g, H, 1), np.ones((1, 2)))


def test_symmetric_sources_split_attention():
    model = small_model()
    g = chain(3, [1, 1, 2], [(0, 2, 1), (1, 2, 1)])
    H = np.random.default_rng(0).standard_normal((3, 8)).astype(np.float32)
    H[1] = H[0]
    assert np.allclose(attention_weights(model.layers[0], g, H, 2), 0.5, atol=1e-7)


def test_identity_message_is_head_split_value():
    model = small_model()
    w = model.params["layers.0.w_msg"]
    w.data = np.broadcast_to(np.eye(4, dtype=np.float32), w.shape).copy()
    g = chain(3, [0, 2, 1], [(0, 1, 0), (2, 1, 1)])
    H = np.random.default_rng(2).standard_normal((3, 8)).astype(np.float32)
    H[2] = 0.0
    msg = messages(model.layers[0], g, H, 1)
    v = model.params["layers.0.v"].data
    assert np.allclose(msg[0], (H[0] @ v[0]).reshape(2, 4), atol=1e-6)
    assert np.array_equal(msg[1], np.zeros((2, 4)))


def test_zero_update_and_isolated_node_keep_residual():
    model = small_model()
    model.params["layers.0.a"].data[:] = 0
    g = chain(3, [0, 1, 2], [(0, 1, 0)])
    H = np.random.default_rng(3).standard_normal((3, 8)).astype(np.float32)
    assert np.array_equal(aggregate(model.layers[0], g, H, 1), H[1])
    fresh = small_model()
    assert np.array_equal(aggregate(fresh.layers[0], g, H, 2), H[2])
    assert attention_weights(fresh.layers[0], g, H, 2).shape == (0, 2)
    with pytest.raises(GraphError, match="unknown node"):
        attention_weights(fresh.layers[0], g, H, 9)


def test_layers_must_be_positive_and_zero_weights_are_identity():
    with pytest.raises(ValueError, match="at least one"):
        ModelConfig(layers=0)
    model = small_model(layers=3)
    for name, p in model.params.items():
        if name.rsplit(".", 1)[-1] in ("w_att", "w_msg", "a"):
            p.data[:] = 0
    rng = np.random.default_rng(4)
    g = random_graph(rng, 6, 6, 3, E)
    with T.no_grad():
        H = model.encode(make_batch([g]))
    assert np.array_equal(H[-1].data, H[0].data)


def test_single_node_readout_is_mlp_of_concat():
    model = small_model()
    g = chain(1, [0], [], features=np.random.default_rng(5).standard_normal((1, 6)).astype(np.float32))
    with T.no_grad():
        z, logits = model.forward(make_batch([g]))
    P = {k: v.data.astype(np.float64) for k, v in model.params.items()}
    x = g.features[0].astype(np.float64)
    H0 = x @ P["input_projection"]
    H1 = H0  # no sources: relu(0 @ A) + residual
    h = np.maximum(0.0, np.concatenate([x, H1]) @ P["readout.l1.w"] + P["readout.l1.b"])
    expected = h @ P["readout.l2.w"] + P["readout.l2.b"]
    assert np.allclose(z.data[0], expected, atol=1e-5)
    assert np.allclose(logits.data[0], expected @ P["classifier.l1.w"] + P["classifier.l1.b"], atol=1e-5)


def test_nine_node_slice_gives_two_logits(two_method_graph):
    from dshgt.embedder import embed_nodes, fit_embedding
    from dshgt.method_cpg import slice_methods
    from dshgt.model import graph_arrays

    m = next(s for s in slice_methods(two_method_graph) if s.method_node == 3)
    X = embed_nodes(fit_embedding([["x"]]), m.graph)
    model = DshgtModel(ModelConfig(), seed=0).eval()
    z, logits = model.forward(make_batch([graph_arrays(m, X)]))
    assert z.shape == (1, 64) and logits.data[0].shape == (2,)
    assert np.isfinite(logits.data).all()


@settings(max_examples=25)
@given(st.integers(3, 9), st.integers(0, 2**31))
def test_node_relabeling_leaves_embedding_unchanged(n, seed):
    model = small_model(seed % 11, layers=2)
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, 6, 3, E)
    perm = rng.permutation(n)
    inv = np.argsort(perm)  # new position of old node i is inv[i]
    h = GraphArrays(np.arange(n), g.types[perm], inv[g.src], inv[g.tgt], g.rel.copy(), g.features[perm])
    with T.no_grad():
        z1, _ = model.forward(make_batch([g]))
        z2, _ = model.forward(make_batch([h]))
    assert np.allclose(z1.data, z2.data, atol=1e-5)


def test_batched_equals_separate():
    model = small_model(layers=2)
    rng = np.random.default_rng(8)
    gs = [random_graph(rng, k, 6, 3, E) for k in (3, 5, 4)]
    with T.no_grad():
        zb, _ = model.forward(make_batch(gs))
        single = [model.forward(make_batch([g]))[0].data[0] for g in gs]
    assert np.allclose(zb.data, np.stack(single), atol=1e-5)
    with pytest.raises(GraphError, match="empty graph"):
        make_batch([chain(0, [], [])])


def test_shared_mu_scaling_keeps_argmax():
    model = small_model()
    model.params["layers.0.mu"].data[:] = 1.0
    rng = np.random.default_rng(9)
    g = random_graph(rng, 6, 6, 3, E, n_edges=12)
    H = rng.standard_normal((6, 8)).astype(np.float32)
    before = [attention_weights(model.layers[0], g, H, t) for t in range(6)]
    model.params["layers.0.mu"].data[:] = 3.7
    after = [attention_weights(model.layers[0], g, H, t) for t in range(6)]
    for a, b in zip(before, after):
        if len(a):
            assert np.array_equal(a.argmax(axis=0), b.argmax(axis=0))


def test_homogeneous_parameters_and_attention():
    heter = small_model()
    homo = homogeneous_mode(heter)
    assert homo.config.homogeneous
    assert homo.num_parameters() < heter.num_parameters()
    fresh = DshgtModel(ModelConfig(**{**SMALL, "homogeneous": True}), seed=1)
    assert fresh.num_parameters() == homo.num_parameters()
    g = chain(3, [0, 2, 1], [(0, 1, 0), (2, 1, 2)])
    H = np.random.default_rng(1).standard_normal((3, 8)).astype(np.float32)
    H[2] = H[0]
    for m in (homo, fresh):
        att = attention_weights(m.layers[0], g, H, 1)
        assert np.allclose(att, 0.5, atol=1e-7)


def test_fused_loss_identities():
    main, sup = Tensor(1.0), Tensor(0.5)
    assert fuse(main, sup, 0.0) is main
    assert fuse(main, sup, 1.0) is sup
    assert fuse(1.0, 0.5, 0.2) == 0.9
    assert math.isclose(fuse(main, sup, 0.2).item(), 0.9, rel_tol=1e-7)
    logits = Tensor([[0.3, -0.2]])
    ce = T.cross_entropy(logits, [1]).item()
    assert fused_loss(logits, 1, None, 0.7).item() == ce
    assert fused_loss(logits, 1, Tensor(2.0), 0.0).item() == ce
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        fused_loss(logits, 1, Tensor(2.0), 1.5)
    with pytest.raises(ValueError):
        fuse(1.0, 0.5, -0.1)
