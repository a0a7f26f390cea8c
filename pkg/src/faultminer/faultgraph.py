"""Alarm topology extraction and the fault mining tree.

The dependency graph is first cut down to the alarmed services and their
transitive callers; alarmed services are then connected directly whenever a
call path runs between them through only non-alarmed intermediates. The
resulting propagation graph is shaped into a search tree: cycles broken
deterministically, every weakly-connected region parented under a shared
virtual root, and surplus edges kept aside as cross-links.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .telemetry import DependencyGraph

VIRTUAL_ROOT = "virtual_root"


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class AlarmPropagationGraph:
    nodes: frozenset[str]
    edges: frozenset[tuple[str, str]]

    def successors(self, node: str) -> list[str]:
        return sorted(v for u, v in self.edges if u == node)


def _ancestors(graph: DependencyGraph, targets: set[str]) -> set[str]:
    """All transitive callers of any target."""
    rev: dict[str, set[str]] = {}
    for u, v in graph.edges:
        rev.setdefault(v, set()).add(u)
    seen: set[str] = set()
    queue = deque(targets)
    while queue:
        node = queue.popleft()
        for caller in rev.get(node, ()):
            if caller not in seen:
                seen.add(caller)
                queue.append(caller)
    return seen


def extract_alarm_topology(graph: DependencyGraph, alarmed: Iterable[str]) -> AlarmPropagationGraph:
    """Restrict the call graph to alarmed services.

    Keeps an edge u->v between alarmed services whenever the subgraph induced
    by the alarmed set plus its transitive callers contains a u->v call path
    whose interior nodes are all non-alarmed.
    """
    alarmed = set(alarmed)
    missing = sorted(alarmed - set(graph.nodes))
    if missing:
        raise GraphError(f"alarmed service not in dependency graph: {missing[0]}")
    if VIRTUAL_ROOT in alarmed:
        raise GraphError(f"service name collides with {VIRTUAL_ROOT!r}")

    keep = alarmed | _ancestors(graph, alarmed)
    succ: dict[str, list[str]] = {}
    for u, v in graph.edges:
        if u in keep and v in keep:
            succ.setdefault(u, []).append(v)

    edges: set[tuple[str, str]] = set()
    for u in alarmed:
        # walk forward through non-alarmed interior nodes only
        stack = list(succ.get(u, ()))
        seen: set[str] = set()
        while stack:
            w = stack.pop()
            if w in seen:
                continue
            seen.add(w)
            if w in alarmed:
                if w != u:
                    edges.add((u, w))
                continue
            stack.extend(succ.get(w, ()))
    return AlarmPropagationGraph(frozenset(alarmed), frozenset(edges))


def _find_back_edges(nodes: Sequence[str], succ: dict[str, list[str]]) -> list[tuple[str, str]]:
    """Back edges in discovery order of a DFS that visits nodes and neighbors
    in lexicographic order."""
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {n: WHITE for n in nodes}
    back: list[tuple[str, str]] = []
    for root in nodes:
        if color[root] != WHITE:
            continue
        stack: list[tuple[str, Iterable[str]]] = [(root, iter(succ.get(root, ())))]
        color[root] = GRAY
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if color[nxt] == GRAY:
                    back.append((node, nxt))
                elif color[nxt] == WHITE:
                    color[nxt] = GRAY
                    stack.append((nxt, iter(succ.get(nxt, ()))))
                    advanced = True
                    break
            if not advanced:
                color[node] = BLACK
                stack.pop()
    return back


@dataclass
class FaultMiningTree:
    """Search tree over alarmed services rooted at a shared virtual node.

    children preserves discovery order; cross_links holds every propagation
    edge that did not become a tree edge, so a node's original callers are
    its tree parent plus its cross-link callers.
    """

    parent: dict[str, str] = field(default_factory=dict)      # node -> parent
    children: dict[str, tuple[str, ...]] = field(default_factory=dict)
    cross_links: tuple[tuple[str, str], ...] = ()

    @property
    def subtree_roots(self) -> tuple[str, ...]:
        return self.children.get(VIRTUAL_ROOT, ())

    def nodes(self) -> list[str]:
        return sorted(self.parent)

    def children_of(self, node: str) -> tuple[str, ...]:
        return self.children.get(node, ())

    def path_to(self, node: str) -> list[str]:
        """Path from a subtree root down to `node` (virtual root excluded)."""
        path = []
        cur: str | None = node
        while cur is not None and cur != VIRTUAL_ROOT:
            path.append(cur)
            cur = self.parent.get(cur)
        return list(reversed(path))

    def callers(self, node: str) -> list[str]:
        out = []
        p = self.parent.get(node)
        if p and p != VIRTUAL_ROOT:
            out.append(p)
        out.extend(u for u, v in self.cross_links if v == node and u != p)
        return sorted(set(out))

    def edge_count(self) -> int:
        return sum(len(c) for c in self.children.values())

    def to_json_dict(self) -> dict:
        return {
            "virtual_root": VIRTUAL_ROOT,
            "nodes": self.nodes(),
            "parent": dict(sorted(self.parent.items())),
            "children": {k: list(v) for k, v in sorted(self.children.items())},
            "cross_links": [list(e) for e in self.cross_links],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))


def build_fault_mining_tree(apg: AlarmPropagationGraph) -> FaultMiningTree:
    """Shape the propagation graph into a tree under the virtual root.

    Cycles are broken by repeatedly removing the back-edge discovered last in
    a deterministic DFS. Each weakly-connected component is walked breadth
    first from its in-degree-0 nodes (or its smallest node when a bare cycle
    left none); a node's parent is its first discoverer, later edges become
    cross-links, and the walk's sources attach to the virtual root.
    """
    nodes = sorted(apg.nodes)
    if not nodes:
        raise GraphError("nothing alarmed: propagation graph is empty")
    edges = set(apg.edges)
    removed: list[tuple[str, str]] = []
    while True:
        succ: dict[str, list[str]] = {}
        for u, v in sorted(edges):
            succ.setdefault(u, []).append(v)
        back = _find_back_edges(nodes, succ)
        if not back:
            break
        edges.discard(back[-1])
        removed.append(back[-1])

    # weakly-connected components over the acyclic edge set
    neighbor: dict[str, set[str]] = {n: set() for n in nodes}
    for u, v in edges:
        neighbor[u].add(v)
        neighbor[v].add(u)
    unvisited = set(nodes)
    components: list[list[str]] = []
    for start in nodes:
        if start not in unvisited:
            continue
        comp = []
        queue = deque([start])
        unvisited.discard(start)
        while queue:
            n = queue.popleft()
            comp.append(n)
            for m in sorted(neighbor[n]):
                if m in unvisited:
                    unvisited.discard(m)
                    queue.append(m)
        components.append(sorted(comp))

    succ = {}
    indeg: dict[str, int] = {n: 0 for n in nodes}
    for u, v in sorted(edges):
        succ.setdefault(u, []).append(v)
        indeg[v] += 1

    parent: dict[str, str] = {}
    children: dict[str, list[str]] = {VIRTUAL_ROOT: []}
    cross: set[tuple[str, str]] = set(removed)
    for comp in components:
        sources = [n for n in comp if indeg[n] == 0]
        if not sources:
            sources = [comp[0]]
        queue = deque()
        for s in sources:
            parent[s] = VIRTUAL_ROOT
            children[VIRTUAL_ROOT].append(s)
            children.setdefault(s, [])
            queue.append(s)
        discovered = set(sources)
        while queue:
            u = queue.popleft()
            for v in succ.get(u, ()):
                if v not in discovered:
                    discovered.add(v)
                    parent[v] = u
                    children.setdefault(u, []).append(v)
                    children.setdefault(v, [])
                    queue.append(v)
                else:
                    cross.add((u, v))

    return FaultMiningTree(
        parent=parent,
        children={k: tuple(v) for k, v in children.items()},
        cross_links=tuple(sorted(cross)),
    )
