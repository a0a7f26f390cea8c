"""Deterministic scoring and classification rules behind the search.

Three judgments live here: how promising each child of an expanded node is
(integer 1-8 with an enforced winner margin), how strongly a simulated node
looks like the root cause (1-10 scaled to a reward), and which fault
categories the final evidence supports. Each can route through the oracle
adapter so external models can replace the rule engine without changing any
of the clamping or tie-breaking that follows.
"""

from __future__ import annotations

import fnmatch
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .detectors import AnomalyFinding, Kind, Source
from .knowledge import ExpertRule
from .oracle import (
    ROOT_SCORE_MARKERS,
    ROOT_SERVICE_MARKERS,
    ROOT_TYPE_MARKERS,
    OracleAdapter,
    parse_marked,
    raw_child_score,
    render_fault_type_prompt,
    render_simulation_prompt,
    render_verifier_prompt,
    simulation_state_score,
)

SCORE_MIN, SCORE_MAX = 1, 8
MARGIN = 2


class VerdictError(ValueError):
    pass


@dataclass
class ChildStats:
    service: str
    metric: int = 0
    log: int = 0
    trace: int = 0
    rule_bonus: float = 0.0

    @property
    def total(self) -> int:
        return self.metric + self.log + self.trace

    def as_row(self) -> dict:
        return {"service": self.service, "metric": self.metric, "log": self.log,
                "trace": self.trace, "total": self.total,
                "rule_bonus": round(self.rule_bonus, 6)}


def child_stats(service: str, findings: Sequence[AnomalyFinding],
                rules: Sequence[ExpertRule]) -> ChildStats:
    stats = ChildStats(service=service)
    for f in findings:
        if f.source is Source.METRIC:
            stats.metric += 1
        elif f.source is Source.LOG:
            stats.log += 1
        else:
            stats.trace += 1
    for rule in rules:
        if any(rule.matches(f) for f in findings):
            stats.rule_bonus += rule.weight
    return stats


@dataclass
class ChildScoreSet:
    scores: dict[str, int]
    best: str
    no_evidence: bool = False
    oracle_fallback: bool = False

    def margin_ok(self) -> bool:
        others = [s for svc, s in self.scores.items() if svc != self.best]
        return not others or self.scores[self.best] >= max(others) + MARGIN


def _clamp(score: float, lo: int, hi: int) -> int:
    return max(lo, min(hi, int(score + 0.5) if score >= 0 else lo))


def _enforce_margin(raw: dict[str, int]) -> ChildScoreSet:
    best = min((svc for svc in raw), key=lambda s: (-raw[s], s))
    if len(raw) == 1:
        return ChildScoreSet(scores=dict(raw), best=best)
    second = max(v for svc, v in raw.items() if svc != best)
    lifted = min(SCORE_MAX, max(raw[best], second + MARGIN))
    scores = {svc: (lifted if svc == best else max(1, min(v, lifted - MARGIN)))
              for svc, v in raw.items()}
    return ChildScoreSet(scores=scores, best=best)


def score_children(evidence_by_child: Mapping[str, Sequence[AnomalyFinding]],
                   rules: Sequence[ExpertRule] = (),
                   oracle: OracleAdapter | None = None) -> ChildScoreSet:
    """Score the children of an expansion, winner at least 2 points ahead.

    With no oracle the raw formula applies directly; with one, the rendered
    prompt's parsed scores are used instead (falling back to the formula when
    the reply cannot be parsed). Post-processing is identical either way.
    """
    if not evidence_by_child:
        raise VerdictError("no children to score")
    stats = {svc: child_stats(svc, findings, rules)
             for svc, findings in evidence_by_child.items()}
    if all(s.total == 0 for s in stats.values()):
        scores = {svc: 1 for svc in stats}
        best = min(scores)
        return ChildScoreSet(scores=scores, best=best, no_evidence=True)

    raw: dict[str, int] | None = None
    fallback = False
    if oracle is not None:
        ordered = sorted(stats)
        messages = render_verifier_prompt(
            [stats[svc].as_row() for svc in ordered],
            {svc: [f.detail for f in evidence_by_child[svc]] for svc in ordered})
        reply = oracle.complete(messages, kind="verifier")
        services = parse_marked(reply, *ROOT_SERVICE_MARKERS)
        numbers = parse_marked(reply, *ROOT_SCORE_MARKERS)
        parsed: dict[str, int] = {}
        for svc, num in zip(services, numbers):
            try:
                parsed[svc] = _clamp(float(num), SCORE_MIN, SCORE_MAX)
            except ValueError:
                continue
        if set(parsed) == set(stats):
            raw = parsed
        else:
            fallback = True
    if raw is None:
        raw = {svc: raw_child_score(s.metric, s.log, s.trace, s.total, s.rule_bonus)
               for svc, s in stats.items()}
    result = _enforce_margin(raw)
    result.oracle_fallback = fallback
    return result


@dataclass
class SimulationScore:
    state_score: int            # S in [1, 10]
    reward: float               # R = S / 10
    own_count: int
    caller_counts: dict[str, int] = field(default_factory=dict)


def score_simulation(own_findings: Sequence[AnomalyFinding],
                     caller_findings: Mapping[str, Sequence[AnomalyFinding]],
                     service: str = "",
                     oracle: OracleAdapter | None = None) -> SimulationScore:
    """Reward for a rollout at one node from its own and caller anomaly counts."""
    own = len(own_findings)
    caller_counts = {svc: len(fs) for svc, fs in caller_findings.items()}
    total = sum(caller_counts.values())
    score = simulation_state_score(own, total)
    if oracle is not None:
        messages = render_simulation_prompt(service or "service", own, caller_counts,
                                            [f.detail for f in own_findings[:10]])
        reply = oracle.complete(messages, kind="simulation")
        numbers = parse_marked(reply, *ROOT_SCORE_MARKERS)
        if numbers:
            try:
                score = max(1, min(10, int(float(numbers[0]) + 0.5)))
            except ValueError:
                pass
    return SimulationScore(state_score=score, reward=score / 10.0,
                           own_count=own, caller_counts=caller_counts)


@dataclass(frozen=True)
class TaxonomyEntry:
    label: str
    subject_globs: tuple[str, ...] = ()
    kinds: tuple[Kind, ...] = ()

    def matches(self, finding: AnomalyFinding) -> bool:
        if finding.kind in self.kinds:
            return True
        subject = finding.subject.lower()
        return any(fnmatch.fnmatch(subject, g) for g in self.subject_globs)


DEFAULT_TAXONOMY: tuple[TaxonomyEntry, ...] = (
    TaxonomyEntry("CPU problem", ("*cpu*",)),
    TaxonomyEntry("Memory problem", ("*memory*", "*mem_*", "*oom*")),
    TaxonomyEntry("Network problem", ("*network*", "*latency*"), (Kind.LATENCY_SPIKE,)),
    TaxonomyEntry("File system I/O", ("*disk*", "*io_*", "*_io*", "*fs_*")),
    TaxonomyEntry("Process Pause", (), (Kind.CALL_FAILURE,)),
)


@dataclass
class FaultTypeEntry:
    label: str
    count: int
    rationale: str

    def to_dict(self) -> dict:
        return {"label": self.label, "count": self.count, "rationale": self.rationale}


def classify_fault_type(findings: Sequence[AnomalyFinding],
                        taxonomy: Sequence[TaxonomyEntry] = DEFAULT_TAXONOMY,
                        oracle: OracleAdapter | None = None,
                        service: str = "") -> list[FaultTypeEntry]:
    """Top-3 fault categories by matched-finding count, ties alphabetical.

    Findings bucket into their first matching taxonomy entry; when nothing
    matches the single Unknown entry explains why.
    """
    counts: dict[str, int] = {}
    for f in findings:
        for entry in taxonomy:
            if entry.matches(f):
                counts[entry.label] = counts.get(entry.label, 0) + 1
                break
    if not counts:
        return [FaultTypeEntry("Unknown", 0, "no finding matched a known fault category")]

    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:3]
    entries = [FaultTypeEntry(label, count,
                              f"{count} finding(s) matched this category")
               for label, count in ranked]
    if oracle is not None:
        messages = render_fault_type_prompt(
            service or "service",
            [{"label": label, "count": count} for label, count in sorted(counts.items())],
            [f.detail for f in findings[:10]])
        reply = oracle.complete(messages, kind="fault_type")
        blocks = parse_marked(reply, *ROOT_TYPE_MARKERS)
        parsed: list[FaultTypeEntry] = []
        labels = {e.label for e in taxonomy}
        for block in blocks[:3]:
            fields = [p.strip() for p in block.split("|")]
            if not fields or fields[0] not in labels:
                continue
            count = 0
            rationale = fields[-1] if len(fields) > 1 else ""
            for p in fields[1:]:
                if p.startswith("count="):
                    try:
                        count = int(p[len("count="):])
                    except ValueError:
                        pass
            parsed.append(FaultTypeEntry(fields[0], count, rationale))
        if parsed and all(parsed[i].count >= parsed[i + 1].count
                          for i in range(len(parsed) - 1)):
            entries = parsed
    return entries


@dataclass
class GranularityCall:
    level: str                  # "POD" | "SERVICE"
    pod: str | None = None
    note: str | None = None

    def to_dict(self) -> dict:
        return {"level": self.level, "pod": self.pod, "note": self.note}


def refine_granularity(service: str,
                       findings: Iterable[AnomalyFinding]) -> GranularityCall:
    """POD when exactly one pod carries the service's findings, else SERVICE."""
    pods = {f.pod for f in findings if f.service == service and f.pod}
    if len(pods) == 1:
        return GranularityCall("POD", pod=next(iter(pods)))
    if not pods:
        return GranularityCall("SERVICE", note="no pod attribution")
    return GranularityCall("SERVICE")
