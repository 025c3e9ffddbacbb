import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from labgraph.graph import (ROOT, CodeGraph, CodeParseError, GraphBuildError, UnknownCodeError, build_graph,
                            level_stats, neighbors, parse_code, uniform_tree)


@pytest.fixture
def small():
    return build_graph(["410.1", "410.2", "414", "250.01"], ["390-459", "410-414", "240-279"],
                       [("410.1", "410.2")])


def test_parse_code_kinds():
    assert parse_code("783.1").kind == "subcode"
    assert parse_code("783.1").parent_code == "783"
    assert parse_code("250.01").parent_code == "250.0"
    assert parse_code("V45").kind == "category"
    assert parse_code("E880.1").parent_code == "E880"
    assert parse_code("390-459").range == (390, 459)
    assert parse_code(ROOT).kind == "root"


@pytest.mark.parametrize("code,pos", [("", 0), ("41x", 2), ("41", 0), ("410.123", 7), ("459-390", 4),
                                      ("410..1", 4)])
def test_parse_code_errors_carry_position(code, pos):
    with pytest.raises(CodeParseError) as info:
        parse_code(code)
    assert info.value.position == pos


def test_build_graph_inserts_parents_and_nests_ranges(small):
    chain = [small.code_of(n) for n in small.ancestors(small.id_of("410.1"))]
    assert chain == [ROOT, "390-459", "410-414", "410", "410.1"]
    assert small.code_of(small.parent[small.id_of("250.01")]) == "250.0"
    assert small.depth == 4
    assert small.root == 0


def test_sibling_edges_are_derived_not_stored(small):
    tsv = small.to_tsv()
    assert all(line.split("\t")[0] in ("pc", "ex") for line in tsv.splitlines() if not line.startswith("#"))
    a, b = small.id_of("410.1"), small.id_of("410.2")
    assert b in small.siblings(a) and a in small.siblings(b)
    assert small.n_edges == len(small.parent_child_edges()) + len(small.exclusion_edges())


def test_tsv_round_trip(small, tmp_path):
    path = tmp_path / "g.tsv"
    small.save(path)
    again = CodeGraph.load(path)
    assert again.to_tsv() == small.to_tsv()
    assert [n.code for n in again.nodes] == [n.code for n in small.nodes]


def test_tsv_errors_name_the_line():
    with pytest.raises(GraphBuildError, match="line 2"):
        CodeGraph.from_tsv("pc\tROOT\t410\nxx 410\n")
    with pytest.raises(GraphBuildError, match="two parents"):
        CodeGraph.from_tsv("pc\tROOT\t410\npc\tROOT\t411\npc\t410\t410.1\npc\t411\t410.1\n")


def test_build_graph_rejections():
    with pytest.raises(GraphBuildError, match="duplicate"):
        build_graph(["410", "410"])
    with pytest.raises(GraphBuildError, match="overlap"):
        build_graph(["410"], ["400-420", "410-430"])
    with pytest.raises(GraphBuildError, match="overlap"):
        build_graph(["410"], ["400-420", "400-420"])
    with pytest.raises(GraphBuildError):
        build_graph([])


def test_cycle_and_reflexive_exclusion_rejected():
    with pytest.raises(GraphBuildError):
        CodeGraph({"410": "411", "411": "410"})
    with pytest.raises(GraphBuildError, match="reflexive"):
        CodeGraph({"410": ROOT}, [("410", "410")])


def test_unknown_code():
    g = uniform_tree([2, 2])
    with pytest.raises(UnknownCodeError):
        g.id_of("999.9")
    with pytest.raises(UnknownCodeError):
        neighbors(g, 999)


def test_neighbors_children_siblings_and_pruning(small):
    n410, a, b = small.id_of("410"), small.id_of("410.1"), small.id_of("410.2")
    got = neighbors(small, n410)
    assert set(got) == {a, b, small.id_of("414")}
    assert got == sorted(got)
    assert b not in neighbors(small, n410, context=[a])  # excluded partner of a context node
    assert a in neighbors(small, n410, context=[a])  # context nodes stay selectable
    assert a not in neighbors(small, n410, forbidden=[a])
    assert neighbors(small, n410, siblings=False) == sorted([a, b])


def test_uniform_tree_shape():
    g = uniform_tree([4, 3, 2])
    assert len(g) == 41 and g.depth == 3 and len(g.leaves()) == 24
    assert g.max_branching == 4
    g = uniform_tree([10, 10, 10])
    assert len(g) == 1111 and len(g.leaves()) == 1000
    for node in g.nodes[1:]:
        assert parse_code(node.code)  # every generated code is well formed


def test_uniform_tree_rejects_degenerate_fanout():
    with pytest.raises(ValueError):
        uniform_tree([1, 1, 1])
    with pytest.raises(ValueError):
        uniform_tree([2, 0])
    assert len(uniform_tree([3, 1])) == 7  # fan-out 1 below the categories is fine


def test_level_stats():
    g = uniform_tree([2, 2])
    stats = level_stats(g, [g.code_of(1), g.code_of(3), g.code_of(4)])
    assert stats == {1: pytest.approx(1 / 3), 2: pytest.approx(2 / 3)}
    with pytest.raises(ValueError):
        level_stats(g, [])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(2, 4), min_size=1, max_size=3), st.integers(0, 2**31 - 1))
def test_neighbors_invariants(branching, seed):
    g = uniform_tree(branching)
    rng = np.random.default_rng(seed)
    for _ in range(10):
        node = int(rng.integers(len(g)))
        forbidden = set(rng.choice(len(g), size=min(3, len(g)), replace=False).tolist())
        context = set(rng.choice(len(g), size=min(2, len(g)), replace=False).tolist())
        out = neighbors(g, node, forbidden, context)
        legal = set(g.children[node]) | set(g.siblings(node))
        assert set(out) <= legal
        assert not set(out) & forbidden
        assert all(not g.exclusion[c] & (forbidden | context) for c in out)
        assert out == sorted(out)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(2, 3), min_size=1, max_size=3))
def test_tree_structure_properties(branching):
    g = uniform_tree(branching)
    for node in range(1, len(g)):
        anc = g.ancestors(node)
        assert anc[0] == g.root and anc[-1] == node
        assert len(anc) - 1 == g.level(node)
        assert node in g.children[g.parent[node]]
        assert node not in g.siblings(node)
    assert CodeGraph.from_tsv(g.to_tsv()).to_tsv() == g.to_tsv()
