"""Residual-based anomaly detection over metric and trace telemetry.

A forecaster (autoregressive or moving average) supplies one-step predictions;
points whose standardized residual z = (y - yhat) / sigma exceeds a threshold
become SPIKE or DIP findings. Trace latencies run through the same rule per
call edge, and interval error counts become CALL_FAILURE findings.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .config import DetectorConfig, ModelConfig, MultivariateConfig
from .telemetry import MetricSeries, SpanRecord, TimeWindow, format_ts


class DetectorError(ValueError):
    pass


class Source(str, Enum):
    METRIC = "METRIC"
    LOG = "LOG"
    TRACE = "TRACE"


class Kind(str, Enum):
    SPIKE = "SPIKE"
    DIP = "DIP"
    ERROR_LOG = "ERROR_LOG"
    WARN_LOG = "WARN_LOG"
    LATENCY_SPIKE = "LATENCY_SPIKE"
    CALL_FAILURE = "CALL_FAILURE"
    MULTIVARIATE = "MULTIVARIATE"


class Severity(str, Enum):
    WARNING = "WARNING"
    SEVERE = "SEVERE"


def render_detail(ts: float, kind: Kind, subject: str) -> str:
    return f"{format_ts(ts)}: {kind.value} of {subject}"


_DETAIL_RE = re.compile(r"^(?P<ts>[0-9]+(?:\.[0-9]+)?): (?P<kind>[A-Z_]+) of (?P<subject>.+)$")


def parse_detail(detail: str) -> tuple[float, Kind, str]:
    m = _DETAIL_RE.match(detail)
    if not m:
        raise DetectorError(f"unparseable finding detail: {detail!r}")
    return float(m.group("ts")), Kind(m.group("kind")), m.group("subject")


@dataclass(frozen=True)
class AnomalyFinding:
    timestamp: float
    service: str
    source: Source
    kind: Kind
    subject: str       # metric name, template id, or "caller->callee" edge label
    severity: Severity
    detail: str
    pod: str | None = None
    value: float | None = None
    predicted: float | None = None
    sigma: float | None = None

    def to_dict(self) -> dict:
        d = {
            "timestamp": self.timestamp,
            "service": self.service,
            "source": self.source.value,
            "kind": self.kind.value,
            "subject": self.subject,
            "severity": self.severity.value,
            "detail": self.detail,
            "pod": self.pod,
        }
        if self.value is not None:
            d.update(value=self.value, predicted=self.predicted, sigma=self.sigma)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AnomalyFinding":
        return cls(
            timestamp=float(d["timestamp"]),
            service=d["service"],
            source=Source(d["source"]),
            kind=Kind(d["kind"]),
            subject=d["subject"],
            severity=Severity(d["severity"]),
            detail=d["detail"],
            pod=d.get("pod"),
            value=d.get("value"),
            predicted=d.get("predicted"),
            sigma=d.get("sigma"),
        )


def sort_findings(findings: Iterable[AnomalyFinding]) -> list[AnomalyFinding]:
    """Stable deterministic order: time, then source, then subject."""
    return sorted(findings, key=lambda f: (f.timestamp, f.source.value, f.subject, f.kind.value))


@dataclass
class Forecaster:
    """A fitted one-step predictor plus the residual scale it was fitted with.

    history_tail carries the last `order` training values so that every point
    of a subsequent evaluation window has a prediction.
    """

    kind: str
    order: int
    residual_std: float
    coeffs: np.ndarray | None = None          # AR: [intercept, phi_1 .. phi_p]
    history_tail: tuple[float, ...] = ()

    def one_step_predictions(self, values: Sequence[float]) -> np.ndarray:
        ext = np.concatenate([np.asarray(self.history_tail, dtype=float),
                              np.asarray(values, dtype=float)])
        n = len(values)
        k = self.order
        preds = np.empty(n)
        for i in range(n):
            lags = ext[i:i + k]              # the k values before position k+i
            if self.kind == "moving_average":
                preds[i] = lags.mean()
            else:
                preds[i] = self.coeffs[0] + float(np.dot(self.coeffs[1:], lags[::-1]))
        return preds


def _fit_values(values: np.ndarray, model: ModelConfig, epsilon_sigma: float) -> Forecaster:
    n = len(values)
    if model.kind == "ar":
        p = model.p
        if n < max(2 * p, 8):
            raise DetectorError(f"need >= {max(2 * p, 8)} points to fit AR({p}), got {n}")
        rows = np.column_stack([np.ones(n - p)] +
                               [values[p - j - 1:n - j - 1] for j in range(p)])
        target = values[p:]
        coeffs, *_ = np.linalg.lstsq(rows, target, rcond=None)
        residuals = target - rows @ coeffs
        sigma = max(float(np.std(residuals)), epsilon_sigma)
        return Forecaster("ar", p, sigma, coeffs=coeffs,
                          history_tail=tuple(values[-p:]))
    w = model.window
    if n < w + 1:
        raise DetectorError(f"need >= {w + 1} points for a {w}-wide moving average, got {n}")
    preds = np.array([values[t - w:t].mean() for t in range(w, n)])
    residuals = values[w:] - preds
    sigma = max(float(np.std(residuals)), epsilon_sigma)
    return Forecaster("moving_average", w, sigma, history_tail=tuple(values[-w:]))


def fit_forecaster(history: MetricSeries, config: DetectorConfig) -> Forecaster:
    """Fit the configured model on a training series via ordinary least squares."""
    values = np.asarray(history.values, dtype=float)
    return _fit_values(values, config.model, config.epsilon_sigma)


@dataclass(frozen=True)
class ResidualDetector:
    """Threshold rule on standardized residuals."""

    lambda_spike: float = 3.0
    lambda_dip: float = 3.0
    severe_factor: float = 2.0

    def __post_init__(self) -> None:
        if self.lambda_spike <= 0 or self.lambda_dip <= 0:
            raise DetectorError("thresholds must be > 0")

    @classmethod
    def for_metric(cls, metric_name: str, config: DetectorConfig) -> "ResidualDetector":
        spike, dip = config.thresholds_for(metric_name)
        return cls(spike, dip, config.severe_factor)


def detect_residual_anomalies(series: MetricSeries, forecaster: Forecaster,
                              detector: ResidualDetector) -> list[AnomalyFinding]:
    """Flag points whose standardized one-step residual crosses a threshold."""
    if not series.points:
        return []
    values = np.asarray(series.values, dtype=float)
    preds = forecaster.one_step_predictions(values)
    sigma = forecaster.residual_std
    findings = []
    for (ts, y), yhat in zip(series.points, preds):
        z = (y - yhat) / sigma
        if z > detector.lambda_spike:
            kind, severe = Kind.SPIKE, z > detector.severe_factor * detector.lambda_spike
        elif z < -detector.lambda_dip:
            kind, severe = Kind.DIP, -z > detector.severe_factor * detector.lambda_dip
        else:
            continue
        findings.append(AnomalyFinding(
            timestamp=ts,
            service=series.service,
            source=Source.METRIC,
            kind=kind,
            subject=series.metric_name,
            severity=Severity.SEVERE if severe else Severity.WARNING,
            detail=render_detail(ts, kind, series.metric_name),
            pod=series.pod,
            value=float(y),
            predicted=float(yhat),
            sigma=sigma,
        ))
    return sort_findings(findings)


def edge_label(caller: str, callee: str) -> str:
    return f"{caller}->{callee}"


class TraceFindings(NamedTuple):
    findings: list[AnomalyFinding]
    skipped_edges: int


def _interval_index(ts: float, start: float, interval: float) -> int:
    return int((ts - start) // interval)


def detect_trace_anomalies(spans: Sequence[SpanRecord], window: TimeWindow,
                           config: DetectorConfig,
                           forecaster_cache: dict[tuple[str, str], Forecaster] | None = None,
                           edges: Iterable[tuple[str, str]] | None = None) -> TraceFindings:
    """Per-edge latency spikes plus per-interval call-failure findings.

    Spans are bucketed into fixed intervals; mean latency per interval forms a
    series that is fitted on the window preceding `window` and evaluated inside
    it. Edges without enough training history are skipped and counted.
    """
    cache = forecaster_cache if forecaster_cache is not None else {}
    interval = config.interval_seconds
    train = window.preceding()

    wanted = set(edges) if edges is not None else None
    lat: dict[tuple[str, str], dict[int, list[float]]] = {}
    err: dict[tuple[str, str], dict[int, int]] = {}
    for s in spans:
        if not s.caller or s.start < train.start or s.start >= window.end:
            continue
        edge = (s.caller, s.callee)
        if wanted is not None and edge not in wanted:
            continue
        idx = _interval_index(s.start, train.start, interval)
        lat.setdefault(edge, {}).setdefault(idx, []).append(s.duration_ms)
        if s.status == "ERROR" and s.start >= window.start:
            err.setdefault(edge, {})[idx] = err.setdefault(edge, {}).get(idx, 0) + 1

    split = int(round(train.length / interval))  # first eval interval index
    min_train = (max(2 * config.model.p, 8) if config.model.kind == "ar"
                 else config.model.window + 1)
    findings: list[AnomalyFinding] = []
    skipped = 0
    detector = ResidualDetector(config.lambda_spike, config.lambda_dip, config.severe_factor)

    for edge in sorted(set(lat) | set(err)):
        caller, callee = edge
        label = edge_label(caller, callee)
        by_idx = lat.get(edge, {})
        train_pts = [(train.start + i * interval, float(np.mean(by_idx[i])))
                     for i in sorted(by_idx) if i < split]
        eval_pts = [(train.start + i * interval, float(np.mean(by_idx[i])))
                    for i in sorted(by_idx) if i >= split]
        if edge in cache:
            forecaster = cache[edge]
        elif len(train_pts) >= min_train:
            forecaster = _fit_values(np.array([v for _, v in train_pts]),
                                     config.model, config.epsilon_sigma)
            cache[edge] = forecaster
        else:
            forecaster = None
            skipped += 1
        if forecaster is not None and eval_pts:
            series = MetricSeries(callee, None, label, tuple(eval_pts))
            for f in detect_residual_anomalies(series, forecaster, detector):
                if f.kind is not Kind.SPIKE:
                    continue  # only slowdowns matter on latency
                findings.append(replace(
                    f, source=Source.TRACE, kind=Kind.LATENCY_SPIKE,
                    detail=render_detail(f.timestamp, Kind.LATENCY_SPIKE, label)))
        for idx, count in sorted(err.get(edge, {}).items()):
            if count <= config.failure_threshold:
                continue
            ts = train.start + idx * interval
            severe = count > 2 * config.failure_threshold
            findings.append(AnomalyFinding(
                timestamp=ts, service=callee, source=Source.TRACE,
                kind=Kind.CALL_FAILURE, subject=label,
                severity=Severity.SEVERE if severe else Severity.WARNING,
                detail=render_detail(ts, Kind.CALL_FAILURE, label),
                value=float(count),
            ))
    return TraceFindings(sort_findings(findings), skipped)


class MultivariateVerdict(str, Enum):
    ANOMALY_EXISTING = "ANOMALY_EXISTING"
    ANOMALY_UNEXISTING = "ANOMALY_UNEXISTING"


MultivariateCheck = Callable[[Sequence[MetricSeries], DetectorConfig], MultivariateVerdict]


def multivariate_check(series: Sequence[MetricSeries], config: DetectorConfig,
                       check: MultivariateCheck | None = None) -> MultivariateVerdict:
    """Joint anomaly screen over one pod's aligned metric series.

    Reference rule: reconstruct each series from the others by least squares
    fitted on a training prefix; a standardized reconstruction error above the
    spike threshold anywhere in the remainder means ANOMALY_EXISTING. A
    different detector can be slotted in through `check`.
    """
    if check is not None:
        return check(series, config)
    if len(series) < 2:
        raise DetectorError("multivariate check needs >= 2 series")
    stamps = series[0].timestamps
    for s in series[1:]:
        if s.timestamps != stamps:
            raise DetectorError("series timestamps are not aligned")
    if not stamps:
        return MultivariateVerdict.ANOMALY_UNEXISTING

    matrix = np.array([s.values for s in series], dtype=float).T  # points x series
    n, m = matrix.shape
    cut = max(int(n * config.multivariate.train_fraction), 2)
    if cut >= n:
        return MultivariateVerdict.ANOMALY_UNEXISTING
    for j in range(m):
        others = np.delete(matrix, j, axis=1)
        design = np.column_stack([np.ones(n), others])
        beta, *_ = np.linalg.lstsq(design[:cut], matrix[:cut, j], rcond=None)
        resid = matrix[:, j] - design @ beta
        sigma = max(float(np.std(resid[:cut])), config.epsilon_sigma)
        if np.any(np.abs(resid[cut:]) / sigma > config.lambda_spike):
            return MultivariateVerdict.ANOMALY_EXISTING
    return MultivariateVerdict.ANOMALY_UNEXISTING
