"""Log template mining and anomalous-template selection.

Raw lines are grouped into templates with a fixed-depth token tree (numeric
and hex-like tokens masked to a wildcard first). Keyword matching splits the
templates into a priority set; when the priority set overflows its budget a
second stage prunes it, either by TF-IDF + Gaussian-mixture clustering or by
matching curated normal/anomalous patterns.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from sklearn.mixture import GaussianMixture

from .config import LogMiningConfig
from .detectors import AnomalyFinding, Kind, Severity, Source, render_detail, sort_findings
from .telemetry import LogRecord

WILDCARD = "<*>"

_NUM_RE = re.compile(r"^\d+(?:\.\d+)?$")
_HEX_RE = re.compile(r"^0x[0-9a-fA-F]+$|^(?=.*\d)[0-9a-fA-F]{8,}$")


def mask_tokens(message: str) -> tuple[str, ...]:
    """Whitespace-tokenize and replace numerals / hex-like ids with a wildcard."""
    out = []
    for tok in message.split():
        if _NUM_RE.match(tok) or _HEX_RE.match(tok):
            out.append(WILDCARD)
        else:
            out.append(tok)
    return tuple(out)


@dataclass(frozen=True)
class LogTemplate:
    template_id: str
    tokens: tuple[str, ...]
    count: int
    samples: tuple[str, ...]

    @property
    def literal_tokens(self) -> tuple[str, ...]:
        return tuple(t for t in self.tokens if t != WILDCARD)

    def text(self) -> str:
        return " ".join(self.tokens)


def _template_id(tokens: Sequence[str]) -> str:
    return hashlib.sha1(" ".join(tokens).encode("utf-8")).hexdigest()[:12]


def _similarity(pattern: Sequence[str], seq: Sequence[str]) -> float:
    same = sum(1 for p, s in zip(pattern, seq) if p == s and p != WILDCARD)
    return same / len(seq)


class _Node:
    __slots__ = ("children", "clusters")

    def __init__(self) -> None:
        self.children: dict[str, _Node] = {}
        self.clusters: list[list] = []  # [pattern(list), [seq keys]]


class DrainResult(NamedTuple):
    templates: list[LogTemplate]
    assignment: tuple[str, ...]  # template_id per input record


def drain_parse(logs: Sequence[LogRecord], config: LogMiningConfig) -> DrainResult:
    """Group log messages into templates.

    The tree's first level is the token count, the next levels key on leading
    tokens (digit-bearing tokens collapse to the wildcard branch, as does any
    overflow past max_children); leaves hold clusters merged by similarity.
    Unique masked sequences are inserted in sorted order, which makes the
    resulting template set independent of the input ordering.
    """
    seqs: dict[tuple[str, ...], list[int]] = {}
    for i, rec in enumerate(logs):
        seq = mask_tokens(rec.message)
        if seq:
            seqs.setdefault(seq, []).append(i)

    token_levels = config.drain_depth - 2
    roots: dict[int, _Node] = {}
    for seq in sorted(seqs):
        node = roots.setdefault(len(seq), _Node())
        for depth in range(min(token_levels, len(seq))):
            tok = seq[depth]
            if any(c.isdigit() for c in tok):
                tok = WILDCARD
            if tok not in node.children:
                if tok != WILDCARD and len(node.children) >= config.max_children:
                    tok = WILDCARD
                if tok not in node.children:
                    node.children[tok] = _Node()
            node = node.children[tok]
        best, best_sim = None, -1.0
        for cluster in node.clusters:
            sim = _similarity(cluster[0], seq)
            if sim > best_sim:
                best, best_sim = cluster, sim
        if best is not None and best_sim >= config.similarity_threshold:
            best[0] = [p if p == s else WILDCARD for p, s in zip(best[0], seq)]
            best[1].append(seq)
        else:
            node.clusters.append([list(seq), [seq]])

    # clusters whose merged patterns coincide collapse into one template
    by_pattern: dict[tuple[str, ...], list[int]] = {}
    for node_root in roots.values():
        stack = [node_root]
        while stack:
            node = stack.pop()
            stack.extend(node.children.values())
            for pattern, members in node.clusters:
                key = tuple(pattern)
                bucket = by_pattern.setdefault(key, [])
                for seq in members:
                    bucket.extend(seqs[seq])

    templates = []
    assignment: list[str] = [""] * len(logs)
    for pattern, indices in by_pattern.items():
        indices.sort()
        tid = _template_id(pattern)
        samples = []
        for i in indices[:config.max_samples]:
            samples.append(logs[i].message)
        templates.append(LogTemplate(tid, pattern, len(indices), tuple(samples)))
        for i in indices:
            assignment[i] = tid
    templates.sort(key=lambda t: (-t.count, t.template_id))
    return DrainResult(templates, tuple(assignment))


def keyword_filter(templates: Sequence[LogTemplate],
                   keywords: Sequence[str]) -> tuple[list[LogTemplate], list[LogTemplate]]:
    """Split templates into (priority, rest) by case-insensitive keyword match
    against literal tokens and stored samples."""
    lowered = [k.lower() for k in keywords]
    priority, rest = [], []
    for t in templates:
        haystacks = [tok.lower() for tok in t.literal_tokens]
        haystacks += [s.lower() for s in t.samples]
        if any(k in h for k in lowered for h in haystacks):
            priority.append(t)
        else:
            rest.append(t)
    return priority, rest


def tfidf_vectors(templates: Sequence[LogTemplate]) -> tuple[np.ndarray, list[str]]:
    """TF-IDF embedding over literal tokens; rows are L2-normalized.

    All-wildcard templates embed to the zero vector.
    """
    vocab = sorted({tok for t in templates for tok in t.literal_tokens})
    index = {tok: i for i, tok in enumerate(vocab)}
    n = len(templates)
    df = np.zeros(len(vocab))
    for t in templates:
        for tok in set(t.literal_tokens):
            df[index[tok]] += 1
    idf = np.log((1 + n) / (1 + df)) + 1.0
    matrix = np.zeros((n, len(vocab)))
    for row, t in enumerate(templates):
        for tok in t.literal_tokens:
            matrix[row, index[tok]] += 1
        matrix[row] *= idf
        norm = np.linalg.norm(matrix[row])
        if norm > 0:
            matrix[row] /= norm
    return matrix, vocab


class FilterMode(str, Enum):
    CLUSTER = "cluster"
    KB_MATCH = "kb_match"


def choose_filter_mode(normal_patterns: Sequence[str],
                       anomalous_patterns: Sequence[str]) -> FilterMode:
    """Cold-start rule: pattern matching once the knowledge base holds any
    template patterns, clustering otherwise."""
    if normal_patterns or anomalous_patterns:
        return FilterMode.KB_MATCH
    return FilterMode.CLUSTER


def pattern_matches(pattern: str, template: LogTemplate) -> bool:
    ptoks = pattern.split()
    if len(ptoks) != len(template.tokens):
        return False
    return all(p == WILDCARD or p == t for p, t in zip(ptoks, template.tokens))


class FilterResult(NamedTuple):
    retained: list[LogTemplate]
    degraded: bool


def _truncate(templates: Iterable[LogTemplate], budget: int) -> list[LogTemplate]:
    return sorted(templates, key=lambda t: (-t.count, t.template_id))[:budget]


def second_stage_filter(templates: Sequence[LogTemplate], mode: FilterMode,
                        budget: int, config: LogMiningConfig,
                        keyword_ids: set[str] | None = None,
                        normal_patterns: Sequence[str] = (),
                        anomalous_patterns: Sequence[str] = ()) -> FilterResult:
    """Prune an oversized priority set down to at most `budget` templates.

    CLUSTER keeps the mixture components that contain at least one
    keyword-flagged template; KB_MATCH keeps templates matching an anomalous
    pattern and drops those matching only a normal pattern. Output is ordered
    by descending count.
    """
    if not templates:
        return FilterResult([], False)
    if mode is FilterMode.CLUSTER:
        if len(templates) < config.gmm_components:
            return FilterResult(_truncate(templates, budget), True)
        matrix, _ = tfidf_vectors(templates)
        gmm = GaussianMixture(n_components=config.gmm_components,
                              covariance_type="diag",
                              max_iter=config.gmm_iterations,
                              random_state=config.gmm_seed,
                              reg_covar=1e-6, n_init=1)
        labels = gmm.fit_predict(matrix)
        flagged = keyword_ids or set()
        anomalous_labels = {lab for t, lab in zip(templates, labels)
                            if t.template_id in flagged}
        retained = [t for t, lab in zip(templates, labels) if lab in anomalous_labels]
        return FilterResult(_truncate(retained, budget), False)

    retained = []
    for t in templates:
        if any(pattern_matches(p, t) for p in anomalous_patterns):
            retained.append(t)
        elif any(pattern_matches(p, t) for p in normal_patterns):
            continue
        else:
            retained.append(t)
    return FilterResult(_truncate(retained, budget), False)


@dataclass
class LogEvidence:
    service: str
    pod: str
    findings: list[AnomalyFinding] = field(default_factory=list)
    summary: str = ""
    retained_templates: tuple[str, ...] = ()
    oracle_fallback: bool = False


def summarize_log_evidence(service: str, pod: str,
                           retained: Sequence[LogTemplate],
                           logs: Sequence[LogRecord],
                           assignment: Sequence[str],
                           config: LogMiningConfig,
                           oracle=None) -> LogEvidence:
    """Turn retained templates into findings plus a pod-level summary.

    One finding per template that occurred on this pod; ERROR_LOG/SEVERE when
    the template carries a severe keyword, WARN_LOG otherwise. The summary is
    rendered deterministically unless an external oracle is supplied, in which
    case its completion is used with a deterministic fallback on failure.
    """
    by_id = {t.template_id: t for t in retained}
    stats: dict[str, list] = {}  # template_id -> [count, first_ts]
    for rec, tid in zip(logs, assignment):
        if rec.service != service or rec.pod != pod or tid not in by_id:
            continue
        slot = stats.setdefault(tid, [0, rec.timestamp])
        slot[0] += 1
        slot[1] = min(slot[1], rec.timestamp)

    findings = []
    lines = []
    for t in retained:
        if t.template_id not in stats:
            continue
        count, first_ts = stats[t.template_id]
        text = t.text()
        severe = any(k in tok.lower() for k in config.severe_keywords
                     for tok in t.literal_tokens)
        kind = Kind.ERROR_LOG if severe else Kind.WARN_LOG
        findings.append(AnomalyFinding(
            timestamp=first_ts, service=service, source=Source.LOG, kind=kind,
            subject=t.template_id,
            severity=Severity.SEVERE if severe else Severity.WARNING,
            detail=render_detail(first_ts, kind, t.template_id),
            pod=pod, value=float(count),
        ))
        lines.append(f"pod {pod}: {count} occurrences of template {text}")
    findings = sort_findings(findings)[:config.evidence_cap]

    deterministic = "; ".join(lines) if lines else "no abnormal logs"
    summary, fallback = deterministic, False
    if oracle is not None and getattr(oracle, "is_external", False):
        from .oracle import render_log_summary_prompt
        try:
            summary = oracle.complete(render_log_summary_prompt(service, pod, lines),
                                      kind="log_summary").strip() or deterministic
        except Exception:
            summary, fallback = deterministic, True
    return LogEvidence(service=service, pod=pod, findings=findings,
                       summary=summary, retained_templates=tuple(t.template_id for t in retained),
                       oracle_fallback=fallback)
