"""Expert rules, curated template patterns, and the historical case library.

Cases store one anomaly fingerprint per involved service. Retrieval ranks
cases by the best per-service Jaccard overlap with the current fingerprint;
a greedy alignment between all explored services and a candidate case then
yields the similarity score that the match confirmation thresholds on.
"""

from __future__ import annotations

import fnmatch
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

from .detectors import AnomalyFinding, Kind, Severity, Source

Fingerprint = frozenset


class KnowledgeError(ValueError):
    pass


def fingerprint_of(findings: Iterable[AnomalyFinding]) -> frozenset[str]:
    """Timestamp- and pod-free signature: one source:kind:subject token each."""
    return frozenset(f"{f.source.value}:{f.kind.value}:{f.subject}" for f in findings)


def jaccard(a: frozenset, b: frozenset) -> float:
    if not a and not b:
        return 1.0
    union = len(a | b)
    return len(a & b) / union if union else 1.0


@dataclass(frozen=True)
class ExpertRule:
    """Weight bonus applied when any finding matches every given field."""

    rule_id: str
    weight: float
    note: str = ""
    source: Source | None = None
    kind: Kind | None = None
    severity: Severity | None = None
    subject_glob: str | None = None

    def matches(self, finding: AnomalyFinding) -> bool:
        if self.source is not None and finding.source is not self.source:
            return False
        if self.kind is not None and finding.kind is not self.kind:
            return False
        if self.severity is not None and finding.severity is not self.severity:
            return False
        if self.subject_glob is not None and not fnmatch.fnmatch(finding.subject, self.subject_glob):
            return False
        return True

    def to_dict(self) -> dict:
        return {
            "id": self.rule_id, "weight": self.weight, "note": self.note,
            "source": self.source.value if self.source else None,
            "kind": self.kind.value if self.kind else None,
            "severity": self.severity.value if self.severity else None,
            "subject_glob": self.subject_glob,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExpertRule":
        return cls(
            rule_id=d["id"], weight=float(d["weight"]), note=d.get("note", ""),
            source=Source(d["source"]) if d.get("source") else None,
            kind=Kind(d["kind"]) if d.get("kind") else None,
            severity=Severity(d["severity"]) if d.get("severity") else None,
            subject_glob=d.get("subject_glob"),
        )


@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    per_service: dict[str, frozenset[str]]
    root_cause_service: str
    granularity: str           # "POD" | "SERVICE"
    fault_type: str
    solution: str = ""
    confirmed: bool = False

    def __post_init__(self) -> None:
        if self.root_cause_service not in self.per_service:
            raise KnowledgeError(
                f"case {self.case_id}: root cause {self.root_cause_service!r} "
                "has no fingerprint entry")
        if self.granularity not in ("POD", "SERVICE"):
            raise KnowledgeError(f"case {self.case_id}: bad granularity {self.granularity!r}")

    def best_similarity(self, fingerprint: frozenset[str]) -> float:
        return max(jaccard(fingerprint, fp) for fp in self.per_service.values())

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "per_service": {svc: sorted(fp) for svc, fp in sorted(self.per_service.items())},
            "root_cause_service": self.root_cause_service,
            "granularity": self.granularity,
            "fault_type": self.fault_type,
            "solution": self.solution,
            "confirmed": self.confirmed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CaseRecord":
        return cls(
            case_id=d["case_id"],
            per_service={svc: frozenset(fp) for svc, fp in d["per_service"].items()},
            root_cause_service=d["root_cause_service"],
            granularity=d["granularity"],
            fault_type=d["fault_type"],
            solution=d.get("solution", ""),
            confirmed=bool(d.get("confirmed", False)),
        )


class SecondaryMatch(NamedTuple):
    case: CaseRecord
    score: float


@dataclass
class MatchResult:
    matched: bool
    case: CaseRecord
    score: float
    flagged: bool = False       # oracle reply was unusable


@dataclass
class KnowledgeBase:
    rules: list[ExpertRule] = field(default_factory=list)
    normal_templates: list[str] = field(default_factory=list)
    anomalous_templates: list[str] = field(default_factory=list)
    cases: list[CaseRecord] = field(default_factory=list)

    def retrieve_topk(self, fingerprint: frozenset[str], k: int = 5) -> list[SecondaryMatch]:
        """Best k cases by max per-service Jaccard; ties broken by case id."""
        if k < 1:
            raise KnowledgeError("k must be >= 1")
        scored = [SecondaryMatch(c, c.best_similarity(fingerprint)) for c in self.cases]
        scored.sort(key=lambda m: (-m.score, m.case.case_id))
        return scored[:k]

    def add_case(self, case: CaseRecord) -> None:
        if not case.confirmed:
            raise KnowledgeError(f"case {case.case_id} is unconfirmed; refusing to store")
        if any(c.case_id == case.case_id for c in self.cases):
            raise KnowledgeError(f"duplicate case id: {case.case_id}")
        self.cases.append(case)

    def next_case_id(self) -> str:
        return f"case-{len(self.cases) + 1:04d}"

    def to_dict(self) -> dict:
        return {
            "rules": [r.to_dict() for r in self.rules],
            "normal_templates": list(self.normal_templates),
            "anomalous_templates": list(self.anomalous_templates),
            "cases": [c.to_dict() for c in self.cases],
        }

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "KnowledgeBase":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls(
            rules=[ExpertRule.from_dict(r) for r in raw.get("rules", [])],
            normal_templates=[str(t) for t in raw.get("normal_templates", [])],
            anomalous_templates=[str(t) for t in raw.get("anomalous_templates", [])],
            cases=[CaseRecord.from_dict(c) for c in raw.get("cases", [])],
        )


def secondary_match(explored: Mapping[str, frozenset[str]],
                    candidates: Sequence[SecondaryMatch]) -> SecondaryMatch:
    """Align explored services against each candidate case and keep the best.

    Alignment is greedy on pairwise Jaccard (each case service used once);
    the case score averages over all explored services, so services left
    unmatched pull the mean down.
    """
    if not candidates:
        raise KnowledgeError("no candidates to match against")
    if not explored:
        raise KnowledgeError("no explored services to match with")
    best: SecondaryMatch | None = None
    for cand in candidates:
        case = cand.case
        pairs = sorted(
            ((jaccard(fp, cfp), svc, csvc)
             for svc, fp in explored.items()
             for csvc, cfp in case.per_service.items()),
            key=lambda p: (-p[0], p[1], p[2]))
        used_explored: set[str] = set()
        used_case: set[str] = set()
        total = 0.0
        for sim, svc, csvc in pairs:
            if svc in used_explored or csvc in used_case:
                continue
            used_explored.add(svc)
            used_case.add(csvc)
            total += sim
        score = total / len(explored)
        if best is None or score > best.score or (score == best.score
                                                  and case.case_id < best.case.case_id):
            best = SecondaryMatch(case, score)
    return best


def confirm_match(match: SecondaryMatch, evidence_text: str, tau: float,
                  oracle=None) -> MatchResult:
    """Final verdict on a candidate case.

    Deterministic mode thresholds the alignment score at tau (inclusive). With
    an external oracle the yes/no comes from its delimited reply; anything
    unparseable counts as no match and is flagged.
    """
    if oracle is not None and getattr(oracle, "is_external", False):
        from .oracle import KB_MATCH_MARKERS, parse_marked, render_case_match_prompt
        try:
            reply = oracle.complete(
                render_case_match_prompt(match.case, match.score, tau, evidence_text),
                kind="case_match")
            blocks = parse_marked(reply, *KB_MATCH_MARKERS)
        except Exception:
            return MatchResult(False, match.case, match.score, flagged=True)
        if not blocks or blocks[0].strip().lower() not in ("yes", "no"):
            return MatchResult(False, match.case, match.score, flagged=True)
        return MatchResult(blocks[0].strip().lower() == "yes", match.case, match.score)
    return MatchResult(match.score >= tau, match.case, match.score)
