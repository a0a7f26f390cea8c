"""Synthetic microservice scenarios for exercising the diagnosis pipeline.

A scenario is one directory holding metrics.csv, logs.jsonl, spans.csv,
topology.json and manifest.json. The first half hour of telemetry is clean
and serves as training history; the fault runs through minutes 40-49, inside
the 30-minute diagnosis window recorded in the manifest.

Fault signatures: the target pod's own metrics, logs or inbound spans carry
the primary symptom, while direct callers receive a weaker echo (error logs
plus latency spikes on their own inbound edges) that is strong enough to
alarm one hop upstream but decays past that.
"""

from __future__ import annotations

import csv
import json
import random
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .alarms import scan_alarms
from .config import AlarmRules, DetectorConfig, MetricBound
from .knowledge import KnowledgeBase
from .mcts import MctsConfig
from .oracle import OracleAdapter, render_verifier_prompt, raw_child_score
from .pipeline import DEFAULT_EVIDENCE_BUDGET, EvidenceMiner, PipelineResult, run_diagnosis
from .telemetry import TimeWindow, load_logs, load_metrics, load_spans
from .verdict import child_stats

T0 = 1_700_000_000.0
MINUTES = 60
INTERVAL = 60.0
FAULT_MINUTES = tuple(range(40, 50))
PODS_PER_SERVICE = 3

CPU = "CPU"
MEMORY = "MEMORY"
NETWORK_DELAY = "NETWORK_DELAY"
NETWORK_LOSS = "NETWORK_LOSS"
DISK_IO = "DISK_IO"
PROCESS_PAUSE = "PROCESS_PAUSE"
FAULT_TYPES = (CPU, MEMORY, NETWORK_DELAY, NETWORK_LOSS, DISK_IO, PROCESS_PAUSE)

FAULT_LABELS = {
    CPU: "CPU problem",
    MEMORY: "Memory problem",
    NETWORK_DELAY: "Network problem",
    NETWORK_LOSS: "Network problem",
    DISK_IO: "File system I/O",
    PROCESS_PAUSE: "Process Pause",
}

METRIC_BASELINES = {
    "cpu_usage": (30.0, 1.0),
    "memory_usage": (55.0, 1.0),
    "network_traffic": (100.0, 2.0),
    "disk_io": (20.0, 1.0),
    "request_rate": (50.0, 2.0),
}

FAULT_LOG_LINES = {
    CPU: "cpu throttle detected error code {n}",
    MEMORY: "memory allocation error heap size {n}",
    NETWORK_DELAY: "network interface error timeout waiting {n} ms",
    NETWORK_LOSS: "network packet loss error rate {n}",
    DISK_IO: "disk write error io latency {n} ms",
    PROCESS_PAUSE: "",  # a paused process logs nothing itself
}

PROPAGATION_LOG_LINE = "upstream dependency error timeout after {n} ms"

BENIGN_LOG_LINES = (
    "request served status 200 in {n} ms",
    "heartbeat ok uptime {n} s",
    "cache refresh completed items {n}",
)

BASE_LATENCY_MS = 50.0
SPANS_PER_EDGE_PER_MINUTE = 3


def service_name(index: int) -> str:
    """Letter-only names so pod parsing never has to guess at digits."""
    if index < 0 or index >= 26 * 26:
        raise ValueError(f"service index out of range: {index}")
    return "svc-" + chr(ord("a") + index // 26) + chr(ord("a") + index % 26)


def generate_topology(n_services: int, seed: int = 0,
                      kind: str = "dag") -> tuple[list[str], list[tuple[str, str]]]:
    """A layered random DAG (every non-frontend has 1-2 callers) or a chain."""
    if n_services < 2:
        raise ValueError("need at least two services")
    names = [service_name(i) for i in range(n_services)]
    if kind == "chain":
        return names, [(names[i], names[i + 1]) for i in range(n_services - 1)]
    if kind != "dag":
        raise ValueError(f"unknown topology kind: {kind}")
    rng = random.Random(seed)
    n_layers = 3 if n_services < 9 else 4
    layers: list[list[str]] = [[] for _ in range(n_layers)]
    for i, name in enumerate(names):
        layers[i % n_layers if i < n_layers else rng.randrange(n_layers)].append(name)
    layers = [layer for layer in layers if layer]
    edges: list[tuple[str, str]] = []
    for upper, lower in zip(layers, layers[1:]):
        for callee in lower:
            for caller in rng.sample(upper, k=min(len(upper), rng.choice((1, 1, 2)))):
                edges.append((caller, callee))
    return names, sorted(set(edges))


@dataclass
class ScenarioManifest:
    name: str
    services: list[str]
    fault_type: str
    label: str
    target: str
    target_pod: str
    window_start: float
    window_end: float
    fault_minutes: list[int]
    seed: int
    alarm_overrides: dict = field(default_factory=dict)

    def window(self) -> TimeWindow:
        return TimeWindow(self.window_start, self.window_end)

    def to_dict(self) -> dict:
        return {
            "name": self.name, "services": self.services,
            "fault_type": self.fault_type, "label": self.label,
            "target": self.target, "target_pod": self.target_pod,
            "window": {"start": self.window_start, "end": self.window_end},
            "fault_minutes": self.fault_minutes, "seed": self.seed,
            "alarm_overrides": self.alarm_overrides,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioManifest":
        return cls(
            name=d["name"], services=list(d["services"]),
            fault_type=d["fault_type"], label=d["label"],
            target=d["target"], target_pod=d["target_pod"],
            window_start=float(d["window"]["start"]),
            window_end=float(d["window"]["end"]),
            fault_minutes=[int(m) for m in d["fault_minutes"]],
            seed=int(d["seed"]),
            alarm_overrides=dict(d.get("alarm_overrides", {})),
        )


@dataclass
class Scenario:
    directory: Path
    manifest: ScenarioManifest

    @property
    def metrics_path(self) -> Path:
        return self.directory / "metrics.csv"

    @property
    def logs_path(self) -> Path:
        return self.directory / "logs.jsonl"

    @property
    def spans_path(self) -> Path:
        return self.directory / "spans.csv"

    @property
    def topology_path(self) -> Path:
        return self.directory / "topology.json"

    @classmethod
    def load(cls, directory: str | Path) -> "Scenario":
        directory = Path(directory)
        with open(directory / "manifest.json", encoding="utf-8") as fh:
            manifest = ScenarioManifest.from_dict(json.load(fh))
        return cls(directory, manifest)

    def detector_config(self) -> DetectorConfig:
        """Default config plus the manifest's static alarm bounds."""
        config = DetectorConfig()
        bounds = self.manifest.alarm_overrides.get("metric_bounds", [])
        if bounds:
            config.alarms = AlarmRules(metric_bounds=tuple(
                MetricBound(b["metric"], b.get("min"), b.get("max"))
                for b in bounds))
        return config


def _hops_from(target: str, edges: Sequence[tuple[str, str]]) -> dict[str, int]:
    """Caller distance from the target walking call edges backwards."""
    callers: dict[str, list[str]] = {}
    for u, v in edges:
        callers.setdefault(v, []).append(u)
    hops = {target: 0}
    frontier = [target]
    while frontier:
        nxt = []
        for svc in frontier:
            for c in callers.get(svc, []):
                if c not in hops:
                    hops[c] = hops[svc] + 1
                    nxt.append(c)
        frontier = nxt
    return hops


def generate_scenario(root: str | Path, name: str, services: Sequence[str],
                      edges: Sequence[tuple[str, str]], fault_type: str,
                      target: str, seed: int, *, quiet_target: bool = False,
                      propagation: str = "decay",
                      alarm_overrides: dict | None = None) -> Scenario:
    """Write one scenario directory.

    propagation: "decay" echoes to direct callers only (4 error lines per
    minute one hop out, 1 past that), "flat" gives every other service 4
    lines per fault minute, "amplified" gives 8. quiet_target suppresses the
    target's own fault logs so only its metrics betray it.
    """
    if fault_type not in FAULT_TYPES:
        raise ValueError(f"unknown fault type: {fault_type}")
    if target not in services:
        raise ValueError(f"target {target!r} not among services")
    rng = random.Random(seed)
    directory = Path(root) / name
    directory.mkdir(parents=True, exist_ok=True)
    target_pod = f"{target}-0"
    fault_ts = [T0 + m * INTERVAL for m in FAULT_MINUTES]

    hops = _hops_from(target, edges)
    if propagation == "decay":
        echo_lines = {svc: {1: 4, 2: 1}.get(h, 0) for svc, h in hops.items() if h > 0}
    elif propagation in ("flat", "amplified"):
        rate = 4 if propagation == "flat" else 8
        echo_lines = {svc: rate for svc in services if svc != target}
    else:
        raise ValueError(f"unknown propagation mode: {propagation}")
    echo_services = {svc for svc, n in echo_lines.items() if n > 0}

    # -- metrics -------------------------------------------------------------
    with open(directory / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "service", "pod", "metric_name", "value"])
        for svc in services:
            for pod_i in range(PODS_PER_SERVICE):
                pod = f"{svc}-{pod_i}"
                for metric, (base, noise) in METRIC_BASELINES.items():
                    for minute in range(MINUTES):
                        ts = T0 + minute * INTERVAL
                        value = base + rng.gauss(0.0, noise)
                        if (svc == target and pod == target_pod
                                and minute in FAULT_MINUTES):
                            if fault_type == CPU and metric == "cpu_usage":
                                value += 50.0
                            elif fault_type == MEMORY and metric == "memory_usage":
                                value += 25.0
                            elif (fault_type == NETWORK_DELAY
                                  and metric == "network_traffic"):
                                value *= 2.0
                            elif (fault_type == NETWORK_LOSS
                                  and metric == "network_traffic"):
                                value *= 0.3
                            elif fault_type == DISK_IO and metric == "disk_io":
                                value += 40.0
                        writer.writerow([repr(ts), svc, pod, metric, f"{value:.4f}"])

    # -- logs ----------------------------------------------------------------
    records = []
    for svc in services:
        pods = [f"{svc}-{i}" for i in range(PODS_PER_SERVICE)]
        for minute in range(MINUTES):
            ts = T0 + minute * INTERVAL + rng.uniform(0.0, 59.0)
            line = BENIGN_LOG_LINES[minute % len(BENIGN_LOG_LINES)]
            records.append({"timestamp": ts, "service": svc,
                            "pod": pods[minute % len(pods)],
                            "message": line.format(n=rng.randint(1, 500))})
    if not quiet_target and fault_type != PROCESS_PAUSE:
        for ts0 in fault_ts:
            for offset in (5.0, 20.0, 35.0, 50.0):
                records.append({
                    "timestamp": ts0 + offset, "service": target, "pod": target_pod,
                    "message": FAULT_LOG_LINES[fault_type].format(n=rng.randint(1, 500))})
    offsets_by_count = {1: (30.0,), 4: (5.0, 20.0, 35.0, 50.0),
                        8: (3.0, 10.0, 18.0, 25.0, 33.0, 40.0, 48.0, 55.0)}
    for svc, count in sorted(echo_lines.items()):
        if count == 0:
            continue
        for ts0 in fault_ts:
            for offset in offsets_by_count[count]:
                records.append({
                    "timestamp": ts0 + offset, "service": svc, "pod": f"{svc}-0",
                    "message": PROPAGATION_LOG_LINE.format(n=rng.randint(1, 2000))})
    records.sort(key=lambda r: r["timestamp"])
    with open(directory / "logs.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    # -- spans -----------------------------------------------------------------
    counter = 0
    with open(directory / "spans.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trace_id", "span_id", "parent_span_id", "caller",
                         "callee", "start", "duration_ms", "status"])
        for caller, callee in edges:
            for minute in range(MINUTES):
                in_fault = minute in FAULT_MINUTES
                count = SPANS_PER_EDGE_PER_MINUTE
                status = "OK"
                factor = 1.0
                if in_fault and callee == target and fault_type == PROCESS_PAUSE:
                    count *= 2  # retries against a frozen process
                    status = "ERROR"
                elif in_fault and callee == target and fault_type == NETWORK_DELAY:
                    factor = 3.0
                elif in_fault and callee in echo_services:
                    factor = 2.5
                for _ in range(count):
                    counter += 1
                    start = T0 + minute * INTERVAL + rng.uniform(0.0, 59.0)
                    duration = max(1.0, (BASE_LATENCY_MS + rng.gauss(0.0, 3.0)) * factor)
                    writer.writerow([f"t{counter}", f"s{counter}", "", caller,
                                     callee, repr(start), f"{duration:.3f}", status])

    with open(directory / "topology.json", "w", encoding="utf-8") as fh:
        json.dump({"edges": [{"caller": u, "callee": v} for u, v in edges],
                   "nodes": list(services)}, fh, indent=2, sort_keys=True)

    manifest = ScenarioManifest(
        name=name, services=list(services), fault_type=fault_type,
        label=FAULT_LABELS[fault_type], target=target, target_pod=target_pod,
        window_start=T0 + 30 * INTERVAL, window_end=T0 + 60 * INTERVAL,
        fault_minutes=list(FAULT_MINUTES), seed=seed,
        alarm_overrides=alarm_overrides or {})
    with open(directory / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
    return Scenario(directory, manifest)


def default_suite(root: str | Path, count: int = 50, seed: int = 7) -> list[Scenario]:
    """Mixed-fault DAG scenarios, fault types assigned round robin. Targets
    always have at least one caller so every fault can echo upstream."""
    rng = random.Random(seed)
    scenarios = []
    for i in range(count):
        fault_type = FAULT_TYPES[i % len(FAULT_TYPES)]
        names, edges = generate_topology(rng.randint(8, 12),
                                         seed=rng.randrange(1 << 30))
        called = sorted({v for _, v in edges})
        target = rng.choice(called)
        scenarios.append(generate_scenario(
            root, f"s{i:03d}-{fault_type.lower()}", names, edges, fault_type,
            target, seed=rng.randrange(1 << 30)))
    return scenarios


def chain_suite(root: str | Path, length: int, count: int = 3,
                seed: int = 11) -> list[Scenario]:
    """Call chains with every service alarmed; used to compare how prompt
    sizes scale with system size."""
    rng = random.Random(seed * 1000 + length)
    scenarios = []
    for i in range(count):
        names, edges = generate_topology(length, kind="chain")
        scenarios.append(generate_scenario(
            root, f"chain{length:02d}-{i}", names, edges, CPU, names[-1],
            seed=rng.randrange(1 << 30), propagation="flat"))
    return scenarios


def quiet_root_suite(root: str | Path, count: int = 20, seed: int = 13) -> list[Scenario]:
    """Chains whose true root cause logs nothing at all.

    The faulty tail only shows a CPU spike (a static bound alarms it) while
    every upstream service shouts errors, so any method that follows log
    volume is pulled away from the root."""
    rng = random.Random(seed)
    overrides = {"metric_bounds": [{"metric": "cpu_usage", "max": 60.0}]}
    scenarios = []
    for i in range(count):
        names, edges = generate_topology(rng.randint(6, 10), kind="chain")
        scenarios.append(generate_scenario(
            root, f"quiet{i:02d}", names, edges, CPU, names[-1],
            seed=rng.randrange(1 << 30), quiet_target=True,
            propagation="amplified", alarm_overrides=overrides))
    return scenarios


@dataclass
class ScenarioOutcome:
    name: str
    expected_service: str
    expected_label: str
    triggered: bool
    predicted_service: str | None = None
    predicted_labels: list[str] = field(default_factory=list)
    predicted_pod: str | None = None
    granularity: str | None = None
    elapsed_seconds: float = 0.0
    max_input_chars: int = 0
    iterations_used: int = 0
    kb_case: str | None = None

    @property
    def correct_service(self) -> bool:
        return self.triggered and self.predicted_service == self.expected_service

    def correct_type_at(self, k: int) -> bool:
        return self.correct_service and self.expected_label in self.predicted_labels[:k]


@dataclass
class EvalResult:
    outcomes: list[ScenarioOutcome]

    @property
    def count(self) -> int:
        return len(self.outcomes)

    @property
    def fl_at_1(self) -> float:
        return sum(o.correct_service for o in self.outcomes) / self.count

    def ft_at(self, k: int) -> float:
        return sum(o.correct_type_at(k) for o in self.outcomes) / self.count

    @property
    def atc_seconds(self) -> float:
        return statistics.fmean(o.elapsed_seconds for o in self.outcomes)

    @property
    def mtc_chars(self) -> int:
        return max((o.max_input_chars for o in self.outcomes), default=0)

    @property
    def mtc_token_estimate(self) -> int:
        return self.mtc_chars // 4

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "fl_at_1": self.fl_at_1,
            "ft_at_1": self.ft_at(1), "ft_at_2": self.ft_at(2), "ft_at_3": self.ft_at(3),
            "atc_seconds": self.atc_seconds,
            "mtc_chars": self.mtc_chars,
            "mtc_token_estimate": self.mtc_token_estimate,
            "outcomes": [{
                "name": o.name, "expected_service": o.expected_service,
                "expected_label": o.expected_label, "triggered": o.triggered,
                "predicted_service": o.predicted_service,
                "predicted_labels": o.predicted_labels,
                "correct_service": o.correct_service,
                "elapsed_seconds": o.elapsed_seconds,
                "max_input_chars": o.max_input_chars,
                "iterations_used": o.iterations_used,
                "kb_case": o.kb_case,
            } for o in self.outcomes],
        }


def run_scenario(scenario: Scenario, *, kb: KnowledgeBase | None = None,
                 oracle: OracleAdapter | None = None, iterations: int = 20,
                 evidence_budget: int = DEFAULT_EVIDENCE_BUDGET) -> PipelineResult:
    return run_diagnosis(
        scenario.metrics_path, scenario.logs_path, scenario.spans_path,
        scenario.manifest.window(), config=scenario.detector_config(),
        kb=kb, oracle=oracle or OracleAdapter(),
        topology_path=scenario.topology_path,
        mcts_config=MctsConfig(iterations=iterations),
        evidence_budget=evidence_budget)


def evaluate(scenarios: Sequence[Scenario], *, kb: KnowledgeBase | None = None,
             iterations: int = 20,
             evidence_budget: int = DEFAULT_EVIDENCE_BUDGET) -> EvalResult:
    """Diagnose each scenario with a fresh oracle and score the predictions.

    Localization accuracy is the share of scenarios whose reported root cause
    is the injected target (untriggered runs count as misses); type accuracy
    at k additionally needs the injected fault's label among the top-k types.
    """
    outcomes = []
    for scenario in scenarios:
        m = scenario.manifest
        oracle = OracleAdapter()
        started = time.perf_counter()
        result = run_scenario(scenario, kb=kb, oracle=oracle,
                              iterations=iterations,
                              evidence_budget=evidence_budget)
        elapsed = time.perf_counter() - started
        outcome = ScenarioOutcome(
            name=m.name, expected_service=m.target, expected_label=m.label,
            triggered=result.triggered, elapsed_seconds=elapsed,
            max_input_chars=oracle.max_recorded_input)
        if result.triggered and result.report is not None:
            report = result.report
            outcome.predicted_service = report.root_cause_service
            outcome.predicted_labels = [t.label for t in report.fault_types]
            outcome.granularity = report.granularity.level
            outcome.predicted_pod = report.granularity.pod
            outcome.iterations_used = int(report.stats.get("iterations_used", 0))
            outcome.kb_case = report.kb_case.case_id if report.kb_case else None
        outcomes.append(outcome)
    return EvalResult(outcomes)


@dataclass
class BaselineOutcome:
    name: str
    expected_service: str
    triggered: bool
    predicted_service: str | None = None
    elapsed_seconds: float = 0.0
    max_input_chars: int = 0

    @property
    def correct_service(self) -> bool:
        return self.triggered and self.predicted_service == self.expected_service


def baseline_single_shot(scenario: Scenario, *,
                         oracle: OracleAdapter | None = None,
                         evidence_budget: int = DEFAULT_EVIDENCE_BUDGET) -> BaselineOutcome:
    """One-prompt comparison method: mine every alarmed service eagerly, put
    all of it in a single verifier prompt, and take the best raw score (ties
    to the service with more findings, then the smaller name)."""
    m = scenario.manifest
    window = m.window()
    config = scenario.detector_config()
    oracle = oracle or OracleAdapter()
    started = time.perf_counter()

    full = TimeWindow(window.preceding().start, window.end)
    metrics = load_metrics(scenario.metrics_path, full)
    logs = load_logs(scenario.logs_path, full)
    spans = load_spans(scenario.spans_path, full)
    scan = scan_alarms(logs.records, metrics.series, spans.spans, window,
                       config.alarms, keywords=config.logs.keywords)
    if not scan.trigger:
        return BaselineOutcome(m.name, m.target, triggered=False,
                               elapsed_seconds=time.perf_counter() - started)

    miner = EvidenceMiner(metrics.series, logs.records, spans.spans, window,
                          config, budget=evidence_budget)
    evidence = {svc: miner.findings(svc) for svc in scan.alarmed}
    stats = {svc: child_stats(svc, fs, ()) for svc, fs in evidence.items()}
    ordered = sorted(stats)
    oracle.complete(render_verifier_prompt(
        [stats[svc].as_row() for svc in ordered],
        {svc: [f.detail for f in evidence[svc]] for svc in ordered}),
        kind="baseline")
    raw = {svc: raw_child_score(s.metric, s.log, s.trace, s.total, s.rule_bonus)
           for svc, s in stats.items()}
    pick = min(ordered, key=lambda svc: (-raw[svc], -len(evidence[svc]), svc))
    return BaselineOutcome(
        m.name, m.target, triggered=True, predicted_service=pick,
        elapsed_seconds=time.perf_counter() - started,
        max_input_chars=oracle.max_recorded_input)


def baseline_evaluate(scenarios: Sequence[Scenario], *,
                      evidence_budget: int = DEFAULT_EVIDENCE_BUDGET) -> list[BaselineOutcome]:
    return [baseline_single_shot(s, evidence_budget=evidence_budget)
            for s in scenarios]
