from faultminer.alarms import _burst, scan_alarms
from faultminer.config import AlarmRules, MetricBound
from faultminer.telemetry import LogRecord, MetricSeries, SpanRecord, TimeWindow


WINDOW = TimeWindow(0.0, 600.0)
RULES = AlarmRules(metric_bounds=(MetricBound(metric="cpu_usage", max=80.0),
                                  MetricBound(metric="free_disk", min=5.0)))


def _log(ts, message, service="api", pod="api-0"):
    return LogRecord(ts, service, pod, message)


def _span(ts, callee, status="ERROR", n=[0]):
    n[0] += 1
    return SpanRecord(f"t{n[0]}", f"s{n[0]}", None, "web", callee, ts, 1.0, status)


def test_burst_window_edges():
    assert _burst([0.0, 30.0, 60.0], 3, 60.0)          # spans exactly 60s
    assert not _burst([0.0, 30.0, 61.0], 3, 60.0)      # just over
    assert not _burst([0.0, 30.0], 3, 60.0)            # too few events
    assert _burst([0.0, 100.0, 101.0, 102.0], 3, 60.0)  # burst after a gap
    assert _burst([5.0], 1, 60.0)


def test_keyword_burst_triggers():
    logs = [_log(t, "connection error to db") for t in (10.0, 20.0, 30.0)]
    scan = scan_alarms(logs, [], [], WINDOW, AlarmRules())
    assert scan.trigger and scan.alarmed == ["api"]
    assert scan.per_service_alarm_count["api"] == 3


def test_sparse_keyword_lines_stay_quiet():
    logs = [_log(t, "connection error to db") for t in (10.0, 200.0, 400.0)]
    scan = scan_alarms(logs, [], [], WINDOW, AlarmRules())
    assert not scan.trigger and scan.alarmed == []


def test_keyword_match_is_case_insensitive_and_caseful():
    logs = [_log(t, "FATAL Timeout reached") for t in (10.0, 20.0, 30.0)]
    scan = scan_alarms(logs, [], [], WINDOW, AlarmRules(), keywords=("timeout",))
    assert scan.trigger
    scan = scan_alarms(logs, [], [], WINDOW, AlarmRules(), keywords=("disk",))
    assert not scan.trigger


def test_metric_bound_breaches_count_per_point():
    series = MetricSeries("db", "db-0", "cpu_usage",
                          ((0.0, 70.0), (60.0, 85.0), (120.0, 90.0),
                           (700.0, 99.0)))  # last point outside the window
    scan = scan_alarms([], [series], [], WINDOW, RULES)
    assert scan.per_service_alarm_count == {"db": 2}

    low = MetricSeries("db", "db-0", "free_disk", ((0.0, 3.0),))
    scan = scan_alarms([], [low], [], WINDOW, RULES)
    assert scan.per_service_alarm_count == {"db": 1}

    unbounded = MetricSeries("db", "db-0", "request_rate", ((0.0, 1e9),))
    scan = scan_alarms([], [unbounded], [], WINDOW, RULES)
    assert not scan.trigger


def test_error_span_burst_attributed_to_callee():
    spans = [_span(t, "payments") for t in (5.0, 15.0, 25.0, 35.0)]
    spans.append(_span(40.0, "payments", status="OK"))
    scan = scan_alarms([], [], spans, WINDOW, AlarmRules())
    assert scan.per_service_alarm_count == {"payments": 4}


def test_error_spans_below_burst_stay_quiet():
    spans = [_span(t, "payments") for t in (5.0, 300.0, 590.0)]
    scan = scan_alarms([], [], spans, WINDOW, AlarmRules())
    assert not scan.trigger


def test_counts_sum_only_fired_rules():
    # keyword burst fires (3 in 60s); error spans exist but never burst
    logs = [_log(t, "error in worker") for t in (10.0, 20.0, 30.0)]
    spans = [_span(t, "api") for t in (5.0, 300.0)]
    series = MetricSeries("api", "api-0", "cpu_usage", ((0.0, 95.0),))
    scan = scan_alarms(logs, [series], spans, WINDOW, RULES)
    assert scan.per_service_alarm_count == {"api": 4}  # 3 log lines + 1 breach


def test_events_outside_window_are_ignored():
    logs = [_log(t, "error in worker") for t in (610.0, 620.0, 630.0)]
    spans = [_span(t, "api") for t in (700.0, 710.0, 720.0)]
    scan = scan_alarms(logs, [], spans, WINDOW, AlarmRules())
    assert not scan.trigger
