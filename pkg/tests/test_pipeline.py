import csv
import json

import pytest

from faultminer.config import AlarmRules, DetectorConfig, MetricBound, ModelConfig
from faultminer.detectors import Kind, Source
from faultminer.knowledge import ExpertRule, KnowledgeBase
from faultminer.mcts import MctsConfig
from faultminer.pipeline import EvidenceMiner, case_from_report, run_diagnosis
from faultminer.telemetry import (
    METRICS_HEADER,
    SPANS_HEADER,
    TimeWindow,
    load_logs,
    load_metrics,
    load_spans,
)

WINDOW = TimeWindow(600.0, 1200.0)
CONFIG = DetectorConfig(
    model=ModelConfig(kind="moving_average", window=3),
    alarms=AlarmRules(metric_bounds=(MetricBound(metric="cpu_usage", max=60.0),)),
)


def _write_metrics(path, rows, extra_raw=()):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        w.writerows(rows)
        for raw in extra_raw:
            fh.write(raw + "\n")


def _write_logs(path, records, extra_raw=()):
    with open(path, "w") as fh:
        for ts, service, pod, message in records:
            fh.write(json.dumps({"timestamp": ts, "service": service,
                                 "pod": pod, "message": message}) + "\n")
        for raw in extra_raw:
            fh.write(raw + "\n")


def _write_spans(path, rows, extra_raw=()):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SPANS_HEADER)
        w.writerows(rows)
        for raw in extra_raw:
            fh.write(raw + "\n")


def _scenario_files(tmp_path, db_spikes=True, error_logs=True,
                    extra_metric_rows=(), extra_span_rows=(),
                    raw_metric_rows=(), raw_log_rows=(), raw_span_rows=()):
    """Three services web -> api -> db; the db pod misbehaves in the window."""
    metric_rows = []
    for service in ("web", "api", "db"):
        for i in range(20):  # one point per minute over [0, 1200)
            ts = i * 60.0
            value = 30.0
            if db_spikes and service == "db" and ts >= 600.0:
                value = 90.0
            metric_rows.append([ts, service, f"{service}-0", "cpu_usage", value])
    metric_rows.extend(extra_metric_rows)

    log_records = []
    for service in ("web", "api", "db"):
        for i in range(20):
            ts = i * 60.0 + 7.0
            log_records.append((ts, service, f"{service}-0",
                                f"heartbeat ok seq {i}"))
    if error_logs:
        for service in ("web", "api", "db"):
            for minute in range(10, 20):  # eval window only
                for j in range(4):
                    ts = minute * 60.0 + 3.0 + j * 12.0
                    log_records.append((ts, service, f"{service}-0",
                                        f"error contacting backend attempt {j}"))

    span_rows = []
    n = 0
    for caller, callee in (("web", "api"), ("api", "db")):
        for i in range(20):
            for j in range(3):
                n += 1
                span_rows.append([f"t{n}", f"s{n}", "", caller, callee,
                                  i * 60.0 + j * 15.0, 50.0, "OK"])
    span_rows = list(span_rows) + list(extra_span_rows)

    metrics = tmp_path / "metrics.csv"
    logs = tmp_path / "logs.jsonl"
    spans = tmp_path / "spans.csv"
    _write_metrics(metrics, metric_rows, raw_metric_rows)
    _write_logs(logs, log_records, raw_log_rows)
    _write_spans(spans, span_rows, raw_span_rows)
    return metrics, logs, spans


def test_end_to_end_diagnosis(tmp_path):
    metrics, logs, spans = _scenario_files(tmp_path)
    result = run_diagnosis(metrics, logs, spans, WINDOW, config=CONFIG)

    assert result.triggered
    assert result.scan.alarmed == ["api", "db", "web"]
    report = result.report
    assert report.root_cause_service == "db"
    assert report.fault_path == ["web", "api", "db"]
    assert report.granularity.level == "POD"
    assert report.granularity.pod == "db-0"
    assert report.fault_types[0].label == "CPU problem"
    assert report.window == {"start": 600.0, "end": 1200.0}
    assert set(report.alarms) == {"web", "api", "db"}
    assert report.degraded == []
    assert report.stats["input"]["metric_points"] == 60
    assert report.stats["input"]["dropped_rows"] == {"metrics": 0, "logs": 0,
                                                     "spans": 0}

    db_findings = report.per_service_findings["db"]
    kinds = {f.kind for f in db_findings}
    assert Kind.SPIKE in kinds and Kind.ERROR_LOG in kinds
    # three spikes before the moving average catches up with the new level
    assert sum(1 for f in db_findings if f.kind is Kind.SPIKE) == 3


def test_no_alarm_short_circuits(tmp_path):
    metrics, logs, spans = _scenario_files(tmp_path, db_spikes=False,
                                           error_logs=False)
    result = run_diagnosis(metrics, logs, spans, WINDOW, config=CONFIG)
    assert not result.triggered
    assert result.report is None and result.tree is None
    assert result.scan.alarmed == []
    assert result.input_stats["log_lines"] == 60


def test_evidence_budget_caps_per_service(tmp_path):
    metrics, logs, spans = _scenario_files(tmp_path)
    result = run_diagnosis(metrics, logs, spans, WINDOW, config=CONFIG,
                           evidence_budget=2)
    report = result.report
    assert all(len(fs) <= 2 for fs in report.per_service_findings.values())
    assert report.root_cause_service == "db"


def test_degraded_notes_cover_every_input_problem(tmp_path):
    # a metric series and a call edge that exist only inside the diagnosis
    # window have no training history; malformed rows in all three files
    extra_metric_rows = [[600.0 + i * 60.0, "db", "db-0", "request_rate", 5.0]
                         for i in range(10)]
    extra_span_rows = [[f"x{i}", f"y{i}", "", "api", "cache",
                        600.0 + i * 60.0, 20.0, "OK"] for i in range(10)]
    metrics, logs, spans = _scenario_files(
        tmp_path,
        extra_metric_rows=extra_metric_rows,
        extra_span_rows=extra_span_rows,
        raw_metric_rows=["not,a,row", "0,web,web-0,cpu_usage,NaNsense"],
        raw_log_rows=["{broken json", json.dumps({"timestamp": 1.0})],
        raw_span_rows=["too,few,fields"])
    result = run_diagnosis(metrics, logs, spans, WINDOW, config=CONFIG)
    report = result.report

    dropped = report.stats["input"]["dropped_rows"]
    assert dropped["metrics"] == 2 and dropped["logs"] == 2 and dropped["spans"] == 1
    notes = " | ".join(report.degraded)
    assert "malformed metrics" in notes
    assert "malformed logs" in notes
    assert "malformed spans" in notes
    assert "metric series lacked training history" in notes
    assert "call edge(s) lacked training history" in notes


def test_topology_file_overrides_span_graph(tmp_path):
    metrics, logs, spans = _scenario_files(tmp_path)
    topo = tmp_path / "topology.json"
    # reversed call direction: db calls api calls web
    topo.write_text(json.dumps({"edges": [
        {"caller": "db", "callee": "api"},
        {"caller": "api", "callee": "web"}]}))
    result = run_diagnosis(metrics, logs, spans, WINDOW, config=CONFIG,
                           topology_path=topo)
    assert result.report.fault_path[0] == "db"


def test_expert_rules_shift_child_scores(tmp_path):
    metrics, logs, spans = _scenario_files(tmp_path)
    plain = run_diagnosis(metrics, logs, spans, WINDOW, config=CONFIG)
    rule = ExpertRule("cpu-watch", 3.0, subject_glob="cpu_*")
    boosted = run_diagnosis(metrics, logs, spans, WINDOW, config=CONFIG,
                            rules=[rule])

    def score_of(result, service):
        for entry in result.report.trace:
            if entry.child_scores and service in entry.child_scores:
                return entry.child_scores[service]
        return None

    assert score_of(boosted, "db") > score_of(plain, "db")


def test_kb_rules_apply_by_default(tmp_path):
    metrics, logs, spans = _scenario_files(tmp_path)
    kb = KnowledgeBase(rules=[ExpertRule("cpu-watch", 3.0, subject_glob="cpu_*")])
    via_kb = run_diagnosis(metrics, logs, spans, WINDOW, config=CONFIG, kb=kb)
    explicit = run_diagnosis(metrics, logs, spans, WINDOW, config=CONFIG,
                             rules=list(kb.rules))
    trace_scores = lambda r: [t.child_scores for t in r.report.trace
                              if t.child_scores]
    assert trace_scores(via_kb) == trace_scores(explicit)


def test_case_round_trip_enables_replay(tmp_path):
    metrics, logs, spans = _scenario_files(tmp_path)
    first = run_diagnosis(metrics, logs, spans, WINDOW, config=CONFIG)
    case = case_from_report(first.report, "case-0001", solution="restart db")
    assert case.root_cause_service == "db"
    assert case.fault_type == "CPU problem"
    assert case.granularity == "POD"
    assert set(case.per_service) >= {"web", "api", "db"}

    kb = KnowledgeBase()
    kb.add_case(case)
    second = run_diagnosis(metrics, logs, spans, WINDOW, config=CONFIG, kb=kb)
    report = second.report
    assert report.kb_case is not None
    assert report.kb_case.case_id == "case-0001"
    assert report.kb_case.solution == "restart db"
    assert report.root_cause_service == "db"
    assert report.stats["iterations_used"] < first.report.stats["iterations_used"]


def test_miner_slices_windows_and_caches(tmp_path):
    metrics, logs, spans = _scenario_files(tmp_path)
    full = TimeWindow(0.0, 1200.0)
    miner = EvidenceMiner(load_metrics(metrics, full).series,
                          load_logs(logs, full).records,
                          load_spans(spans, full).spans,
                          WINDOW, CONFIG)
    first = miner.findings("db")
    assert first and first is miner.findings("db")  # cached list, same object
    assert all(WINDOW.start <= f.timestamp < WINDOW.end for f in first)
    assert miner.findings("nonexistent") == []
