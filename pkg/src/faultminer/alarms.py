"""Cheap first-pass alarm scan that decides whether diagnosis starts at all.

No forecaster is fitted here; the scan only counts keyword log lines, static
metric bound breaches, and ERROR spans, merging pods into their services.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .config import AlarmRules
from .telemetry import LogRecord, MetricSeries, SpanRecord, TimeWindow, pod_service


@dataclass
class AlarmScan:
    window: TimeWindow
    per_service_alarm_count: dict[str, int] = field(default_factory=dict)

    @property
    def alarmed(self) -> list[str]:
        return sorted(self.per_service_alarm_count)

    @property
    def trigger(self) -> bool:
        return bool(self.per_service_alarm_count)


def _burst(timestamps: list[float], need: int, span: float) -> bool:
    """True when any sliding sub-window of `span` seconds holds >= need events."""
    if len(timestamps) < need:
        return False
    timestamps.sort()
    left = 0
    for right in range(len(timestamps)):
        while timestamps[right] - timestamps[left] > span:
            left += 1
        if right - left + 1 >= need:
            return True
    return False


def scan_alarms(logs: Sequence[LogRecord], metrics: Sequence[MetricSeries],
                spans: Sequence[SpanRecord], window: TimeWindow,
                rules: AlarmRules, keywords: Sequence[str] = ("error", "exception"),
                pod_map: dict[str, str] | None = None) -> AlarmScan:
    """Flag services as alarmed when any static rule fires inside the window.

    Rules: (a) a burst of keyword log lines, (b) a metric outside its
    configured bound, (c) a burst of ERROR spans targeting the service. The
    per-service count sums the signals of the rules that fired.
    """
    lowered = [k.lower() for k in keywords]
    kw_ts: dict[str, list[float]] = {}
    for rec in logs:
        if not window.contains(rec.timestamp):
            continue
        msg = rec.message.lower()
        if any(k in msg for k in lowered):
            service = pod_service(rec.pod, pod_map) if rec.pod else rec.service
            kw_ts.setdefault(rec.service or service, []).append(rec.timestamp)

    breaches: dict[str, int] = {}
    for series in metrics:
        for ts, value in series.points:
            if not window.contains(ts):
                continue
            if any(b.breached(series.metric_name, value) for b in rules.metric_bounds):
                breaches[series.service] = breaches.get(series.service, 0) + 1

    err_ts: dict[str, list[float]] = {}
    for s in spans:
        if s.status == "ERROR" and window.contains(s.start):
            err_ts.setdefault(s.callee, []).append(s.start)

    counts: dict[str, int] = {}
    for service in set(kw_ts) | set(breaches) | set(err_ts):
        total = 0
        lines = kw_ts.get(service, [])
        if _burst(list(lines), rules.keyword_count, rules.sub_window_seconds):
            total += len(lines)
        total += breaches.get(service, 0)
        errs = err_ts.get(service, [])
        if _burst(list(errs), rules.error_span_count, rules.sub_window_seconds):
            total += len(errs)
        if total >= 1:
            counts[service] = total
    return AlarmScan(window=window, per_service_alarm_count=counts)
