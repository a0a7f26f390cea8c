"""Telemetry domain types and file loaders.

Three record kinds feed a diagnosis: metric samples (CSV), log lines
(JSON-Lines), and RPC spans (CSV). Loaders are strict about headers, skip and
count malformed rows, and restrict records to a half-open time window.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

METRICS_HEADER = ["timestamp", "service", "pod", "metric_name", "value"]
SPANS_HEADER = ["trace_id", "span_id", "parent_span_id", "caller", "callee",
                "start", "duration_ms", "status"]

_POD_SUFFIX = re.compile(r"-\d+$")
_TRAILING_DIGITS = re.compile(r"\d+$")


class TelemetryError(ValueError):
    pass


@dataclass(frozen=True)
class TimeWindow:
    """Half-open interval [start, end) in epoch seconds."""

    start: float
    end: float

    def __post_init__(self) -> None:
        if not self.start < self.end:
            raise TelemetryError(f"empty window: start={self.start} end={self.end}")

    @property
    def length(self) -> float:
        return self.end - self.start

    def contains(self, ts: float) -> bool:
        return self.start <= ts < self.end

    def preceding(self) -> "TimeWindow":
        """The training window of equal length right before this one."""
        return TimeWindow(self.start - self.length, self.start)


def pod_service(pod: str, mapping: dict[str, str] | None = None,
                collapse_replica_digits: bool = True) -> str:
    """Derive the owning service from a pod name.

    Strips one trailing ``-<digits>`` ordinal. When the remainder ends in a
    digit run preceded by a letter (replica-set style names like adservice2-0)
    the digits are stripped too. An explicit mapping always wins.
    """
    if mapping and pod in mapping:
        return mapping[pod]
    base = _POD_SUFFIX.sub("", pod)
    if collapse_replica_digits:
        m = _TRAILING_DIGITS.search(base)
        if m and m.start() > 0 and base[m.start() - 1].isalpha():
            base = base[:m.start()]
    return base


@dataclass(frozen=True)
class MetricSeries:
    service: str
    pod: str | None
    metric_name: str
    points: tuple[tuple[float, float], ...]  # (timestamp, value), ascending

    def __post_init__(self) -> None:
        ts = [p[0] for p in self.points]
        if ts != sorted(ts):
            object.__setattr__(self, "points", tuple(sorted(self.points)))

    @property
    def values(self) -> list[float]:
        return [v for _, v in self.points]

    @property
    def timestamps(self) -> list[float]:
        return [t for t, _ in self.points]

    def slice(self, window: TimeWindow) -> "MetricSeries":
        pts = tuple(p for p in self.points if window.contains(p[0]))
        return MetricSeries(self.service, self.pod, self.metric_name, pts)


@dataclass(frozen=True)
class LogRecord:
    timestamp: float
    service: str
    pod: str
    message: str


@dataclass(frozen=True)
class SpanRecord:
    trace_id: str
    span_id: str
    parent_span_id: str | None
    caller: str | None
    callee: str
    start: float
    duration_ms: float
    status: str  # "OK" | "ERROR"


class LoadedMetrics(NamedTuple):
    series: list[MetricSeries]
    dropped_rows: int


class LoadedLogs(NamedTuple):
    records: list[LogRecord]
    dropped_rows: int


class LoadedSpans(NamedTuple):
    spans: list[SpanRecord]
    dropped_rows: int


def load_metrics(path: str | Path, window: TimeWindow) -> LoadedMetrics:
    """Parse a metrics CSV into one series per (service, pod, metric_name)."""
    dropped = 0
    buckets: dict[tuple[str, str | None, str], list[tuple[float, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != METRICS_HEADER:
            raise TelemetryError(f"bad metrics header in {path}: {header}")
        for row in reader:
            if len(row) != 5:
                dropped += 1
                continue
            ts_s, service, pod, metric, value_s = row
            if not service or not metric:
                dropped += 1
                continue
            try:
                ts = float(ts_s)
                value = float(value_s)
            except ValueError:
                dropped += 1
                continue
            if value != value:  # NaN
                dropped += 1
                continue
            if not window.contains(ts):
                continue
            buckets.setdefault((service, pod or None, metric), []).append((ts, value))
    series = [MetricSeries(svc, pod, metric, tuple(sorted(pts)))
              for (svc, pod, metric), pts in sorted(buckets.items(),
                                                    key=lambda kv: (kv[0][0], kv[0][1] or "", kv[0][2]))]
    return LoadedMetrics(series, dropped)


def load_logs(path: str | Path, window: TimeWindow) -> LoadedLogs:
    """Parse JSON-Lines logs; each line needs timestamp, service, pod, message."""
    dropped = 0
    records: list[LogRecord] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                ts = float(obj["timestamp"])
                service = str(obj["service"])
                pod = str(obj["pod"])
                message = str(obj["message"]).strip()
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                dropped += 1
                continue
            if not service or not pod or not message:
                dropped += 1
                continue
            if window.contains(ts):
                records.append(LogRecord(ts, service, pod, message))
    records.sort(key=lambda r: (r.timestamp, r.service, r.pod))
    return LoadedLogs(records, dropped)


def load_spans(path: str | Path, window: TimeWindow) -> LoadedSpans:
    """Parse a spans CSV; empty strings stand for absent optional fields."""
    dropped = 0
    spans: list[SpanRecord] = []
    seen: set[tuple[str, str]] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SPANS_HEADER:
            raise TelemetryError(f"bad spans header in {path}: {header}")
        for row in reader:
            if len(row) != 8:
                dropped += 1
                continue
            trace_id, span_id, parent_id, caller, callee, start_s, dur_s, status = row
            if not trace_id or not span_id or not callee or status not in ("OK", "ERROR"):
                dropped += 1
                continue
            try:
                start = float(start_s)
                duration = float(dur_s)
            except ValueError:
                dropped += 1
                continue
            if duration < 0:
                dropped += 1
                continue
            if (trace_id, span_id) in seen:  # span_id must be unique per trace
                dropped += 1
                continue
            if not window.contains(start):
                continue
            seen.add((trace_id, span_id))
            spans.append(SpanRecord(trace_id, span_id, parent_id or None,
                                    caller or None, callee, start, duration, status))
    spans.sort(key=lambda s: (s.start, s.trace_id, s.span_id))
    return LoadedSpans(spans, dropped)


@dataclass
class DependencyGraph:
    """Directed service call graph: edge (caller, callee)."""

    nodes: frozenset[str]
    edges: frozenset[tuple[str, str]]
    self_loops_dropped: int = 0
    dangling_parents: int = 0

    def callers_of(self, service: str) -> list[str]:
        return sorted(u for u, v in self.edges if v == service)

    def callees_of(self, service: str) -> list[str]:
        return sorted(v for u, v in self.edges if u == service)


def dependency_from_spans(spans: Iterable[SpanRecord]) -> DependencyGraph:
    """Build the call graph from explicit caller fields and parent links.

    A span's parent (same trace) contributes the edge parent.callee -> callee.
    Dangling parent ids leave the span as a root and are counted.
    """
    spans = list(spans)
    by_trace: dict[str, dict[str, SpanRecord]] = {}
    for s in spans:
        by_trace.setdefault(s.trace_id, {})[s.span_id] = s

    nodes: set[str] = set()
    edges: set[tuple[str, str]] = set()
    self_loops = 0
    dangling = 0
    for s in spans:
        nodes.add(s.callee)
        candidates: list[str] = []
        if s.caller:
            candidates.append(s.caller)
        if s.parent_span_id:
            parent = by_trace[s.trace_id].get(s.parent_span_id)
            if parent is None:
                dangling += 1
            else:
                candidates.append(parent.callee)
        for caller in candidates:
            nodes.add(caller)
            if caller == s.callee:
                self_loops += 1
                continue
            edges.add((caller, s.callee))
    return DependencyGraph(frozenset(nodes), frozenset(edges),
                           self_loops_dropped=self_loops, dangling_parents=dangling)


def load_topology(path: str | Path) -> DependencyGraph:
    """Load an explicit topology JSON: {"edges": [{"caller": .., "callee": ..}]}."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    edges: set[tuple[str, str]] = set()
    nodes: set[str] = set()
    self_loops = 0
    for item in raw.get("edges", []):
        caller, callee = str(item["caller"]), str(item["callee"])
        nodes.update((caller, callee))
        if caller == callee:
            self_loops += 1
            continue
        edges.add((caller, callee))
    for extra in raw.get("nodes", []):
        nodes.add(str(extra))
    return DependencyGraph(frozenset(nodes), frozenset(edges), self_loops_dropped=self_loops)


def format_ts(ts: float) -> str:
    """Render a timestamp the way finding details expect (int when integral)."""
    if ts == int(ts):
        return str(int(ts))
    return repr(ts)
