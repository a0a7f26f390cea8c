"""End-to-end diagnosis over telemetry files.

The flow is: load metrics, logs and spans (the diagnosis window plus the
training window right before it), run the cheap alarm scan, and stop early
when nothing alarmed. Otherwise restrict the call graph to the alarmed
services, shape it into a fault mining tree, and hand the tree to the search
with an evidence miner that inspects each service lazily, at most once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .alarms import AlarmScan, scan_alarms
from .config import DetectorConfig
from .detectors import (
    AnomalyFinding,
    DetectorError,
    ResidualDetector,
    TraceFindings,
    detect_residual_anomalies,
    detect_trace_anomalies,
    fit_forecaster,
    sort_findings,
)
from .faultgraph import FaultMiningTree, build_fault_mining_tree, extract_alarm_topology
from .knowledge import CaseRecord, ExpertRule, KnowledgeBase, fingerprint_of
from .logmining import (
    DrainResult,
    FilterMode,
    LogEvidence,
    LogTemplate,
    choose_filter_mode,
    drain_parse,
    keyword_filter,
    second_stage_filter,
    summarize_log_evidence,
)
from .mcts import DiagnosisReport, MctsConfig, SearchAgents, run_search
from .oracle import OracleAdapter
from .telemetry import (
    DependencyGraph,
    LogRecord,
    MetricSeries,
    SpanRecord,
    TimeWindow,
    dependency_from_spans,
    load_logs,
    load_metrics,
    load_spans,
    load_topology,
)

DEFAULT_EVIDENCE_BUDGET = 30


class EvidenceMiner:
    """Per-service anomaly mining with shared lazily-computed stages.

    Metric series are fitted per service on first request; trace findings and
    the log template stage are computed once for the whole window and then
    sliced per service. Every service's merged evidence is capped at `budget`
    findings, strongest first.
    """

    def __init__(self, metrics: Sequence[MetricSeries], logs: Sequence[LogRecord],
                 spans: Sequence[SpanRecord], window: TimeWindow,
                 config: DetectorConfig, kb: KnowledgeBase | None = None,
                 oracle: OracleAdapter | None = None,
                 edges: Sequence[tuple[str, str]] | None = None,
                 budget: int = DEFAULT_EVIDENCE_BUDGET) -> None:
        self.window = window
        self.config = config
        self.kb = kb
        self.oracle = oracle
        self.edges = edges
        self.budget = budget
        self.spans = list(spans)
        self.logs = [r for r in logs if window.contains(r.timestamp)]
        self.skipped_series = 0
        self.log_evidence: dict[str, list[LogEvidence]] = {}

        self._series: dict[str, list[MetricSeries]] = {}
        for s in metrics:
            self._series.setdefault(s.service, []).append(s)
        self._log_pods: dict[str, list[str]] = {}
        for rec in self.logs:
            pods = self._log_pods.setdefault(rec.service, [])
            if rec.pod not in pods:
                pods.append(rec.pod)

        self._cache: dict[str, list[AnomalyFinding]] = {}
        self._trace_by_service: dict[str, list[AnomalyFinding]] | None = None
        self._trace_skipped = 0
        self._stage: tuple[list[LogTemplate], DrainResult, bool] | None = None

    # -- shared stages -------------------------------------------------------
    def trace_findings(self, service: str) -> list[AnomalyFinding]:
        if self._trace_by_service is None:
            result: TraceFindings = detect_trace_anomalies(
                self.spans, self.window, self.config, edges=self.edges)
            self._trace_skipped = result.skipped_edges
            buckets: dict[str, list[AnomalyFinding]] = {}
            for f in result.findings:
                buckets.setdefault(f.service, []).append(f)
            self._trace_by_service = buckets
        return self._trace_by_service.get(service, [])

    def log_stage(self) -> tuple[list[LogTemplate], DrainResult, bool]:
        """Drain templates, keyword split, and (only when the priority set
        overflows the budget) the clustering or pattern-match second stage."""
        if self._stage is None:
            cfg = self.config.logs
            drain = drain_parse(self.logs, cfg)
            priority, _ = keyword_filter(drain.templates, cfg.keywords)
            degraded = False
            if len(priority) > cfg.template_budget:
                normal = self.kb.normal_templates if self.kb else []
                anomalous = self.kb.anomalous_templates if self.kb else []
                mode = choose_filter_mode(normal, anomalous)
                result = second_stage_filter(
                    drain.templates, mode, cfg.template_budget, cfg,
                    keyword_ids={t.template_id for t in priority},
                    normal_patterns=normal, anomalous_patterns=anomalous)
                retained, degraded = result.retained, result.degraded
            else:
                retained = priority
            self._stage = (retained, drain, degraded)
        return self._stage

    @property
    def log_stage_degraded(self) -> bool:
        return self._stage is not None and self._stage[2]

    # -- per-service routes ----------------------------------------------------
    def metric_findings(self, service: str) -> list[AnomalyFinding]:
        out: list[AnomalyFinding] = []
        for series in self._series.get(service, []):
            evaluated = series.slice(self.window)
            if not evaluated.points:
                continue
            try:
                forecaster = fit_forecaster(series.slice(self.window.preceding()),
                                            self.config)
            except DetectorError:
                self.skipped_series += 1
                continue
            detector = ResidualDetector.for_metric(series.metric_name, self.config)
            out.extend(detect_residual_anomalies(evaluated, forecaster, detector))
        return out

    def log_findings(self, service: str) -> list[AnomalyFinding]:
        retained, drain, _ = self.log_stage()
        evidence: list[LogEvidence] = []
        for pod in sorted(self._log_pods.get(service, [])):
            evidence.append(summarize_log_evidence(
                service, pod, retained, self.logs, drain.assignment,
                self.config.logs, self.oracle))
        self.log_evidence[service] = evidence
        return [f for ev in evidence for f in ev.findings]

    def findings(self, service: str) -> list[AnomalyFinding]:
        if service not in self._cache:
            merged = (self.metric_findings(service)
                      + self.log_findings(service)
                      + self.trace_findings(service))
            self._cache[service] = sort_findings(merged)[:self.budget]
        return self._cache[service]


class NoAlarmError(RuntimeError):
    """Raised when the scan finds nothing; diagnosis never starts."""


@dataclass
class PipelineResult:
    triggered: bool
    scan: AlarmScan
    report: DiagnosisReport | None = None
    tree: FaultMiningTree | None = None
    input_stats: dict = field(default_factory=dict)


def run_diagnosis(metrics_path: str | Path, logs_path: str | Path,
                  spans_path: str | Path, window: TimeWindow,
                  config: DetectorConfig | None = None,
                  kb: KnowledgeBase | None = None,
                  oracle: OracleAdapter | None = None,
                  topology_path: str | Path | None = None,
                  mcts_config: MctsConfig | None = None,
                  rules: Sequence[ExpertRule] | None = None,
                  evidence_budget: int = DEFAULT_EVIDENCE_BUDGET) -> PipelineResult:
    """Run the full pipeline over one diagnosis window.

    Returns an untriggered result when no alarm fires. Expert rules default to
    the knowledge base's rules; the oracle defaults to the deterministic one.
    """
    config = config or DetectorConfig()
    oracle = oracle or OracleAdapter()
    full = TimeWindow(window.preceding().start, window.end)
    metrics = load_metrics(metrics_path, full)
    logs = load_logs(logs_path, full)
    spans = load_spans(spans_path, full)
    input_stats = {
        "metric_points": sum(len(s.points) for s in metrics.series),
        "log_lines": len(logs.records),
        "spans": len(spans.spans),
        "dropped_rows": {"metrics": metrics.dropped_rows,
                         "logs": logs.dropped_rows,
                         "spans": spans.dropped_rows},
    }

    scan = scan_alarms(logs.records, metrics.series, spans.spans, window,
                       config.alarms, keywords=config.logs.keywords)
    if not scan.trigger:
        return PipelineResult(triggered=False, scan=scan, input_stats=input_stats)

    if topology_path is not None:
        dep: DependencyGraph = load_topology(topology_path)
    else:
        dep = dependency_from_spans(spans.spans)
    apg = extract_alarm_topology(dep, scan.alarmed)
    tree = build_fault_mining_tree(apg)

    miner = EvidenceMiner(metrics.series, logs.records, spans.spans, window,
                          config, kb=kb, oracle=oracle,
                          edges=sorted(dep.edges), budget=evidence_budget)
    agents = SearchAgents(
        miner=miner, oracle=oracle, kb=kb,
        rules=tuple(rules) if rules is not None else tuple(kb.rules) if kb else ())
    report = run_search(tree, agents, mcts_config)

    report.window = {"start": window.start, "end": window.end}
    report.alarms = dict(scan.per_service_alarm_count)
    report.stats["input"] = input_stats
    degraded = []
    for source, dropped in input_stats["dropped_rows"].items():
        if dropped:
            degraded.append(f"{dropped} malformed {source} row(s) skipped")
    if miner.skipped_series:
        degraded.append(f"{miner.skipped_series} metric series lacked training history")
    if miner._trace_skipped:
        degraded.append(f"{miner._trace_skipped} call edge(s) lacked training history")
    if miner.log_stage_degraded:
        degraded.append("log template set too small to cluster; kept by count")
    if any(ev.oracle_fallback for evs in miner.log_evidence.values() for ev in evs):
        degraded.append("log summary oracle failed; deterministic summary used")
    report.degraded = degraded
    return PipelineResult(triggered=True, scan=scan, report=report, tree=tree,
                          input_stats=input_stats)


def case_from_report(report: DiagnosisReport, case_id: str, solution: str = "",
                     confirmed: bool = True) -> CaseRecord:
    """Store a finished diagnosis as a reusable case."""
    per_service = {svc: fingerprint_of(fs)
                   for svc, fs in report.per_service_findings.items()}
    if report.root_cause_service not in per_service:
        per_service[report.root_cause_service] = frozenset()
    fault_type = report.fault_types[0].label if report.fault_types else "Unknown"
    return CaseRecord(
        case_id=case_id,
        per_service=per_service,
        root_cause_service=report.root_cause_service,
        granularity=report.granularity.level,
        fault_type=fault_type,
        solution=solution,
        confirmed=confirmed,
    )
