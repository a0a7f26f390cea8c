import random

import pytest

from faultminer.faultgraph import (
    VIRTUAL_ROOT,
    AlarmPropagationGraph,
    GraphError,
    build_fault_mining_tree,
    extract_alarm_topology,
)
from faultminer.telemetry import DependencyGraph


def _graph(edges, extra_nodes=()):
    nodes = {u for u, _ in edges} | {v for _, v in edges} | set(extra_nodes)
    return DependencyGraph(frozenset(nodes), frozenset(edges))


def test_extraction_keeps_direct_alarmed_edges():
    dep = _graph([("a", "b"), ("b", "c"), ("c", "d")])
    apg = extract_alarm_topology(dep, ["a", "b"])
    assert apg.nodes == frozenset({"a", "b"})
    assert apg.edges == frozenset({("a", "b")})
    assert apg.successors("a") == ["b"]


def test_extraction_bridges_non_alarmed_intermediates():
    # a -> x -> y -> b with only a and b alarmed collapses to a -> b
    dep = _graph([("a", "x"), ("x", "y"), ("y", "b")])
    apg = extract_alarm_topology(dep, ["a", "b"])
    assert apg.edges == frozenset({("a", "b")})


def test_extraction_does_not_bridge_through_alarmed_nodes():
    # path a -> m -> b where m itself is alarmed: no shortcut a -> b
    dep = _graph([("a", "m"), ("m", "b")])
    apg = extract_alarm_topology(dep, ["a", "m", "b"])
    assert apg.edges == frozenset({("a", "m"), ("m", "b")})


def test_extraction_validates_input():
    dep = _graph([("a", "b")])
    with pytest.raises(GraphError):
        extract_alarm_topology(dep, ["a", "ghost"])
    dep2 = _graph([("a", VIRTUAL_ROOT)])
    with pytest.raises(GraphError):
        extract_alarm_topology(dep2, ["a", VIRTUAL_ROOT])


def test_isolated_alarmed_service_survives_extraction():
    dep = _graph([("a", "b")], extra_nodes=["lonely"])
    apg = extract_alarm_topology(dep, ["lonely"])
    assert apg.nodes == frozenset({"lonely"})
    assert apg.edges == frozenset()


def test_tree_structure_for_simple_dag():
    apg = AlarmPropagationGraph(frozenset({"a", "b", "c"}),
                                frozenset({("a", "b"), ("a", "c")}))
    tree = build_fault_mining_tree(apg)
    assert tree.subtree_roots == ("a",)
    assert tree.parent == {"a": VIRTUAL_ROOT, "b": "a", "c": "a"}
    assert tree.children_of("a") == ("b", "c")
    assert tree.path_to("c") == ["a", "c"]
    assert tree.cross_links == ()
    # one edge per non-virtual node
    assert tree.edge_count() == len(tree.nodes())


def test_diamond_turns_duplicate_edge_into_cross_link():
    edges = {("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")}
    tree = build_fault_mining_tree(
        AlarmPropagationGraph(frozenset("abcd"), frozenset(edges)))
    assert tree.parent["d"] == "b"        # first discoverer in BFS order
    assert ("c", "d") in tree.cross_links
    assert tree.callers("d") == ["b", "c"]
    assert tree.callers("a") == []
    assert tree.path_to("d") == ["a", "b", "d"]


def test_cycle_is_broken_deterministically():
    edges = {("a", "b"), ("b", "c"), ("c", "a")}
    tree = build_fault_mining_tree(
        AlarmPropagationGraph(frozenset("abc"), frozenset(edges)))
    # a bare cycle has no in-degree-0 node; smallest node becomes the source
    assert tree.subtree_roots == ("a",)
    assert tree.path_to("c") == ["a", "b", "c"]
    assert ("c", "a") in tree.cross_links
    assert tree.callers("a") == ["c"]


def test_components_share_the_virtual_root():
    edges = {("a", "b"), ("x", "y")}
    tree = build_fault_mining_tree(
        AlarmPropagationGraph(frozenset("abxy"), frozenset(edges)))
    assert tree.subtree_roots == ("a", "x")
    assert tree.parent["a"] == VIRTUAL_ROOT and tree.parent["x"] == VIRTUAL_ROOT
    assert tree.path_to("y") == ["x", "y"]


def test_empty_graph_is_rejected():
    with pytest.raises(GraphError):
        build_fault_mining_tree(AlarmPropagationGraph(frozenset(), frozenset()))


def test_serialization_is_deterministic():
    rng = random.Random(5)
    nodes = [f"s{i}" for i in range(12)]
    edges = {(nodes[rng.randrange(12)], nodes[rng.randrange(12)])
             for _ in range(20)}
    edges = {(u, v) for u, v in edges if u != v}
    apg = AlarmPropagationGraph(frozenset(nodes), frozenset(edges))
    blobs = {build_fault_mining_tree(apg).to_json() for _ in range(5)}
    assert len(blobs) == 1


def test_every_node_is_reachable_from_virtual_root():
    rng = random.Random(9)
    for _ in range(25):
        n = rng.randint(2, 15)
        nodes = [f"s{i}" for i in range(n)]
        edges = set()
        for _ in range(rng.randint(1, 3 * n)):
            u, v = rng.sample(nodes, 2)
            edges.add((u, v))
        tree = build_fault_mining_tree(
            AlarmPropagationGraph(frozenset(nodes), frozenset(edges)))
        assert set(tree.parent) == set(nodes)
        for node in nodes:
            path = tree.path_to(node)
            assert path[-1] == node
            assert tree.parent[path[0]] == VIRTUAL_ROOT
        # tree edges plus cross-links recover the original edge set
        tree_edges = {(p, c) for c, p in tree.parent.items() if p != VIRTUAL_ROOT}
        assert tree_edges | set(tree.cross_links) == edges
        assert tree_edges.isdisjoint(tree.cross_links)
