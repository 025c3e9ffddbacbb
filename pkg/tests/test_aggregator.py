import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from labgraph import tensor as T
from labgraph.aggregator import (CHILD, EXCLUSION, PARENT, SIBLING, AggregatorConfig, RelationalAggregator,
                                 fuse, multi_hop_neighborhood, one_hop_table)
from labgraph.graph import CodeGraph, uniform_tree


@pytest.fixture
def graph():
    base = uniform_tree([3, 2, 2])
    leaves = base.leaves()
    ex = [(base.code_of(leaves[0]), base.code_of(leaves[1]))]
    return CodeGraph({n.code: base.code_of(base.parent[n.id]) for n in base.nodes[1:]}, ex)


def adjacency(g):
    a = np.zeros((len(g), len(g)), dtype=int)
    for u in range(len(g)):
        for v in list(g.children[u]) + g.siblings(u) + list(g.exclusion[u]):
            a[u, v] = a[v, u] = 1
    return a


def test_one_hop_table_lists_every_relation(graph):
    nbr, rel, mask = one_hop_table(graph)
    for u in range(len(graph)):
        got = {(int(v), int(r)) for v, r, m in zip(nbr[u], rel[u], mask[u]) if m}
        want = {(v, CHILD) for v in graph.children[u]} | {(v, SIBLING) for v in graph.siblings(u)}
        want |= {(v, EXCLUSION) for v in graph.exclusion[u]}
        if graph.parent[u] >= 0:
            want.add((graph.parent[u], PARENT))
        assert got == want


def test_multi_hop_matches_matrix_power_oracle(graph):
    a = adjacency(graph) + np.eye(len(graph), dtype=int)
    for hops in (1, 2, 3):
        reach = np.linalg.matrix_power(a, hops) > 0
        for u in range(len(graph)):
            want = set(np.flatnonzero(reach[u]).tolist()) - {u}
            assert multi_hop_neighborhood(graph, u, hops) == want


def test_attention_weights_normalised(graph):
    agg = RelationalAggregator(graph, 4, AggregatorConfig(), np.random.default_rng(0))
    emb = T.Tensor(np.random.default_rng(1).normal(size=(len(graph), 4)))
    beta, _ = agg.attention(emb)
    np.testing.assert_allclose(beta.data.sum(axis=1), 1.0, atol=1e-12)
    assert (beta.data[~agg.mask] == 0).all()


@pytest.mark.parametrize("gate", ["scalar", "vector"])
def test_aggregator_gradient(graph, gate):
    rng = np.random.default_rng(2)
    agg = RelationalAggregator(graph, 3, AggregatorConfig(gate=gate), rng)
    emb = T.Tensor(rng.normal(size=(len(graph), 3)), requires_grad=True)
    w = rng.normal(size=(len(graph), 3))
    err = T.grad_check(lambda: T.tsum(agg.forward(emb) * w), [emb, *agg.parameters().values()])
    assert err < 1e-6


def test_hops_below_two_rejected(graph):
    with pytest.raises(ValueError):
        RelationalAggregator(graph, 3, AggregatorConfig(hops=1), np.random.default_rng(0))


def test_fuse_shape_mismatch():
    with pytest.raises(T.DimensionError):
        fuse(np.zeros((2, 3)), np.zeros((2, 4)), 0.5)


def test_fuse_gate_limits():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    np.testing.assert_allclose(fuse(a, b, 0.0).data, b, atol=1e-9)
    np.testing.assert_allclose(fuse(a, b, 1.0).data, a, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 1.0))
def test_fuse_lies_between_inputs(seed, d):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=8), rng.normal(size=8)
    out = fuse(a, b, d).data
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    assert ((out >= lo - 1e-12) & (out <= hi + 1e-12)).all()


def test_neighbour_order_does_not_change_output(graph):
    agg = RelationalAggregator(graph, 4, AggregatorConfig(), np.random.default_rng(4))
    emb = T.Tensor(np.random.default_rng(5).normal(size=(len(graph), 4)))
    before = agg.forward(emb).data
    perm = np.random.default_rng(6).permutation(agg.nbr.shape[1])
    for name in ("nbr", "rel", "mask", "safe_mask"):
        setattr(agg, name, getattr(agg, name)[:, perm])
    np.testing.assert_allclose(agg.forward(emb).data, before, atol=1e-12)


def test_removing_sibling_edges_changes_some_embedding(graph):
    agg = RelationalAggregator(graph, 4, AggregatorConfig(), np.random.default_rng(7))
    emb = T.Tensor(np.random.default_rng(8).normal(size=(len(graph), 4)))
    with_sib = agg.forward(emb).data
    agg.set_graph(graph, include=(PARENT, CHILD, EXCLUSION))
    without = agg.forward(emb).data
    has_sib = [u for u in range(len(graph)) if graph.siblings(u)]
    assert any(not np.allclose(with_sib[u], without[u]) for u in has_sib)
