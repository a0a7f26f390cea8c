"""Monte-Carlo tree search over the fault mining tree.

Each iteration selects a node by UCT, expands it by scoring all children,
simulates the most promising child (a knowledge-base replay check first, a
caller-anomaly rollout score otherwise), and backpropagates the reward. A
confirmed case match ends the search immediately; otherwise the most visited
path is reported with its terminal service as the root cause.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Protocol, Sequence

from .detectors import AnomalyFinding
from .faultgraph import VIRTUAL_ROOT, FaultMiningTree
from .knowledge import (
    CaseRecord,
    ExpertRule,
    KnowledgeBase,
    confirm_match,
    fingerprint_of,
    secondary_match,
)
from .oracle import OracleAdapter
from .verdict import (
    DEFAULT_TAXONOMY,
    ChildScoreSet,
    FaultTypeEntry,
    GranularityCall,
    SimulationScore,
    TaxonomyEntry,
    classify_fault_type,
    refine_granularity,
    score_children,
    score_simulation,
)


class SearchError(ValueError):
    pass


class EvidenceProvider(Protocol):
    def findings(self, service: str) -> Sequence[AnomalyFinding]:
        ...


@dataclass
class MctsConfig:
    iterations: int = 20
    exploration: float = 1.414
    max_path_depth: int = 32
    kb_topk: int = 5
    match_threshold: float = 0.8

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise SearchError("iterations must be >= 1")
        if self.exploration < 0:
            raise SearchError("exploration constant must be >= 0")


@dataclass
class SearchNode:
    service: str
    parent: "SearchNode | None" = None
    children: list["SearchNode"] = field(default_factory=list)
    q: float = 0.0
    n: int = 0
    expanded: bool = False
    terminal: bool = False

    def value(self) -> float:
        return self.q / self.n if self.n else 0.0


def uct(node: SearchNode, parent_visits: int, exploration: float) -> float:
    """Upper confidence bound; unvisited nodes are infinitely attractive."""
    if node.n == 0:
        return math.inf
    return node.q / node.n + exploration * math.sqrt(math.log(parent_visits) / node.n)


@dataclass
class TraceEntry:
    iteration: int
    selected_path: list[str]
    expanded: str | None
    child_scores: dict[str, int] | None
    simulated: str
    state_score: int
    reward: float
    kb_checked: bool = False
    kb_case: str | None = None
    early_stop: bool = False

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration, "selected_path": self.selected_path,
            "expanded": self.expanded, "child_scores": self.child_scores,
            "simulated": self.simulated, "state_score": self.state_score,
            "reward": self.reward, "kb_checked": self.kb_checked,
            "kb_case": self.kb_case, "early_stop": self.early_stop,
        }


@dataclass
class DiagnosisReport:
    root_cause_service: str
    fault_path: list[str]
    granularity: GranularityCall
    fault_types: list[FaultTypeEntry]
    kb_case: CaseRecord | None = None
    trace: list[TraceEntry] = field(default_factory=list)
    per_service_findings: dict[str, list[AnomalyFinding]] = field(default_factory=dict)
    alarms: dict[str, int] = field(default_factory=dict)
    stats: dict = field(default_factory=dict)
    window: dict | None = None
    degraded: list[str] = field(default_factory=list)
    oracle_transcripts: list[dict] = field(default_factory=list)

    SCHEMA_VERSION = 1

    def to_dict(self) -> dict:
        return {
            "schema_version": self.SCHEMA_VERSION,
            "root_cause_service": self.root_cause_service,
            "fault_path": list(self.fault_path),
            "granularity": self.granularity.to_dict(),
            "fault_types": [t.to_dict() for t in self.fault_types],
            "kb_case": self.kb_case.to_dict() if self.kb_case else None,
            "trace": [t.to_dict() for t in self.trace],
            "per_service_findings": {
                svc: [f.to_dict() for f in fs]
                for svc, fs in sorted(self.per_service_findings.items())},
            "alarms": dict(sorted(self.alarms.items())),
            "stats": self.stats,
            "window": self.window,
            "degraded": list(self.degraded),
            "oracle_transcripts": self.oracle_transcripts,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiagnosisReport":
        gran = d.get("granularity") or {}
        return cls(
            root_cause_service=d["root_cause_service"],
            fault_path=list(d.get("fault_path", [])),
            granularity=GranularityCall(gran.get("level", "SERVICE"),
                                        gran.get("pod"), gran.get("note")),
            fault_types=[FaultTypeEntry(t["label"], int(t.get("count", 0)),
                                        t.get("rationale", ""))
                         for t in d.get("fault_types", [])],
            kb_case=CaseRecord.from_dict(d["kb_case"]) if d.get("kb_case") else None,
            per_service_findings={
                svc: [AnomalyFinding.from_dict(f) for f in fs]
                for svc, fs in d.get("per_service_findings", {}).items()},
            alarms=dict(d.get("alarms", {})),
            stats=dict(d.get("stats", {})),
            window=d.get("window"),
            degraded=list(d.get("degraded", [])),
        )


@dataclass
class SearchAgents:
    miner: EvidenceProvider
    oracle: OracleAdapter
    kb: KnowledgeBase | None = None
    rules: Sequence[ExpertRule] = ()
    taxonomy: Sequence[TaxonomyEntry] = DEFAULT_TAXONOMY


class FaultSearch:
    """One diagnosis run; holds the search tree and the evidence cache."""

    def __init__(self, tree: FaultMiningTree, agents: SearchAgents,
                 config: MctsConfig | None = None) -> None:
        if not tree.subtree_roots:
            raise SearchError("nothing alarmed: fault mining tree is empty")
        self.tree = tree
        self.agents = agents
        self.config = config or MctsConfig()
        self.root = SearchNode(VIRTUAL_ROOT)
        self._evidence: dict[str, list[AnomalyFinding]] = {}
        self.trace: list[TraceEntry] = []

    # -- evidence -----------------------------------------------------------
    def evidence(self, service: str) -> list[AnomalyFinding]:
        """Mine a service's findings at most once per diagnosis."""
        if service not in self._evidence:
            self._evidence[service] = list(self.agents.miner.findings(service))
        return self._evidence[service]

    # -- the four MCTS steps -------------------------------------------------
    def select(self, node: SearchNode | None = None) -> SearchNode:
        """Descend by UCT until an unexpanded node or a leaf is reached."""
        node = node or self.root
        depth = 0
        while node.expanded and node.children and depth < self.config.max_path_depth:
            node = max(node.children,
                       key=lambda c: uct(c, max(node.n, 1), self.config.exploration))
            depth += 1
        return node

    def expand(self, node: SearchNode) -> tuple[ChildScoreSet, SearchNode] | None:
        """Score and materialize all children; None when the node is a leaf."""
        node.expanded = True
        kids = self.tree.children_of(node.service)
        if not kids:
            node.terminal = True
            return None
        evidence = {k: self.evidence(k) for k in kids}
        scoreset = score_children(evidence, self.agents.rules, self.agents.oracle)
        node.children = [SearchNode(k, parent=node) for k in kids]
        best = node.children[list(kids).index(scoreset.best)]
        return scoreset, best

    def simulate(self, node: SearchNode) -> tuple[SimulationScore, CaseRecord | None]:
        """Reward the node: confirmed case replay wins outright, otherwise the
        caller-anomaly rollout score applies."""
        findings = self.evidence(node.service)
        kb = self.agents.kb
        if kb is not None and kb.cases:
            fp = fingerprint_of(findings)
            topk = kb.retrieve_topk(fp, self.config.kb_topk)
            if topk:
                explored = {svc: fingerprint_of(self._evidence[svc])
                            for svc in self.tree.path_to(node.service)
                            if svc in self._evidence}
                explored[node.service] = fp
                best = secondary_match(explored, topk)
                evidence_text = "\n".join(f.detail for f in findings[:10])
                result = confirm_match(best, evidence_text,
                                       self.config.match_threshold,
                                       self.agents.oracle)
                if result.matched:
                    sim = SimulationScore(state_score=10, reward=1.0,
                                          own_count=len(findings))
                    return sim, result.case
        callers = self.tree.callers(node.service)
        caller_findings = {c: self.evidence(c) for c in callers}
        sim = score_simulation(findings, caller_findings, node.service,
                               self.agents.oracle)
        return sim, None

    def backpropagate(self, node: SearchNode, reward: float) -> None:
        cur: SearchNode | None = node
        while cur is not None:
            cur.n += 1
            cur.q += reward
            cur = cur.parent

    # -- driver ---------------------------------------------------------------
    def run(self) -> DiagnosisReport:
        started = time.perf_counter()
        match: CaseRecord | None = None
        iterations_used = 0
        for iteration in range(1, self.config.iterations + 1):
            iterations_used = iteration
            node = self.select()
            expanded: str | None = None
            scores: dict[str, int] | None = None
            if not node.expanded:
                result = self.expand(node)
                if result is not None:
                    scoreset, best = result
                    expanded = node.service
                    scores = dict(scoreset.scores)
                    node = best
            sim, match = self.simulate(node)
            self.backpropagate(node, sim.reward)
            path = [n.service for n in self._lineage(node)]
            self.trace.append(TraceEntry(
                iteration=iteration, selected_path=path, expanded=expanded,
                child_scores=scores, simulated=node.service,
                state_score=sim.state_score, reward=sim.reward,
                kb_checked=bool(self.agents.kb and self.agents.kb.cases),
                kb_case=match.case_id if match else None,
                early_stop=match is not None))
            if match is not None:
                break
        report = self._report(match)
        elapsed = time.perf_counter() - started
        oracle = self.agents.oracle
        report.stats = {
            "iterations_used": iterations_used,
            "elapsed_seconds": elapsed,
            "services_mined": len(self._evidence),
            "oracle_calls": len(oracle.transcripts),
            "oracle_input_chars": [t.input_chars for t in oracle.transcripts],
            "max_oracle_input_chars": oracle.max_recorded_input,
        }
        report.oracle_transcripts = [t.to_dict() for t in oracle.transcripts]
        return report

    @staticmethod
    def _lineage(node: SearchNode) -> list[SearchNode]:
        out = []
        cur: SearchNode | None = node
        while cur is not None:
            out.append(cur)
            cur = cur.parent
        return list(reversed(out))

    def _most_visited_path(self) -> list[str]:
        path: list[str] = []
        node = self.root
        while node.children and any(c.n > 0 for c in node.children):
            best = None
            for child in node.children:  # first wins on full ties
                if best is None:
                    best = child
                    continue
                if (child.n, child.value()) > (best.n, best.value()):
                    best = child
            node = best
            path.append(node.service)
            if len(path) >= self.config.max_path_depth:
                break
        return path

    def _report(self, match: CaseRecord | None) -> DiagnosisReport:
        if match is not None:
            if match.root_cause_service in self.tree.parent:
                path = self.tree.path_to(match.root_cause_service)
            else:
                path = [match.root_cause_service]
            evidence = self._evidence.get(match.root_cause_service, [])
            return DiagnosisReport(
                root_cause_service=match.root_cause_service,
                fault_path=path,
                granularity=GranularityCall(match.granularity,
                                            note=f"stored case {match.case_id}"),
                fault_types=[FaultTypeEntry(match.fault_type, len(evidence),
                                            f"stored case {match.case_id}")],
                kb_case=match,
                trace=self.trace,
                per_service_findings=dict(self._evidence),
            )
        path = self._most_visited_path()
        if not path:
            raise SearchError("search ended without a visited child")
        root_cause = path[-1]
        evidence = self.evidence(root_cause)
        fault_types = classify_fault_type(evidence, self.agents.taxonomy,
                                          self.agents.oracle, service=root_cause)
        return DiagnosisReport(
            root_cause_service=root_cause,
            fault_path=path,
            granularity=refine_granularity(root_cause, evidence),
            fault_types=fault_types,
            trace=self.trace,
            per_service_findings=dict(self._evidence),
        )


def run_search(tree: FaultMiningTree, agents: SearchAgents,
               config: MctsConfig | None = None) -> DiagnosisReport:
    return FaultSearch(tree, agents, config).run()
