import random
import statistics

import pytest

from faultminer.config import DetectorConfig, ModelConfig
from faultminer.detectors import (
    DetectorError,
    Forecaster,
    Kind,
    ResidualDetector,
    Severity,
    Source,
    detect_residual_anomalies,
    detect_trace_anomalies,
    fit_forecaster,
    multivariate_check,
    MultivariateVerdict,
    parse_detail,
    render_detail,
    sort_findings,
)
from faultminer.telemetry import MetricSeries, SpanRecord, TimeWindow


def _series(values, start=0.0, step=60.0, service="api", pod="api-0", metric="cpu"):
    points = tuple((start + i * step, float(v)) for i, v in enumerate(values))
    return MetricSeries(service, pod, metric, points)


def _ma_config(window=3):
    return DetectorConfig(model=ModelConfig(kind="moving_average", window=window))


def test_detail_round_trip():
    detail = render_detail(160.0, Kind.SPIKE, "cpu_usage")
    assert detail == "160: SPIKE of cpu_usage"
    assert parse_detail(detail) == (160.0, Kind.SPIKE, "cpu_usage")
    with pytest.raises(DetectorError):
        parse_detail("nonsense")


def test_moving_average_matches_brute_force():
    rng = random.Random(42)
    for _ in range(50):
        w = rng.randint(2, 5)
        train = [rng.uniform(10, 20) for _ in range(rng.randint(w + 1, 30))]
        evals = [rng.uniform(10, 20) for _ in range(rng.randint(1, 10))]
        forecaster = fit_forecaster(_series(train), _ma_config(w))

        # independent oracle: plain-python trailing means over train + eval
        ext = train + evals
        expected = [statistics.fmean(ext[len(train) - w + i:len(train) + i])
                    for i in range(len(evals))]
        got = forecaster.one_step_predictions(evals)
        assert all(abs(a - b) < 1e-9 for a, b in zip(got, expected))

        resid = [train[i] - statistics.fmean(train[i - w:i])
                 for i in range(w, len(train))]
        assert forecaster.residual_std == pytest.approx(
            max(statistics.pstdev(resid) if len(resid) > 1 else 0.0, 1e-6), abs=1e-9)


def test_ar_predicts_noiseless_recursion():
    # a sampled cosine obeys y_t = c + 2cos(w) y_{t-1} - y_{t-2} exactly,
    # which sits inside the default AR(3) model class
    import math
    w = 0.7
    values = [5.0 + math.cos(w * t) for t in range(40)]
    forecaster = fit_forecaster(_series(values[:30]), DetectorConfig())
    preds = forecaster.one_step_predictions(values[30:])
    assert all(abs(p - v) < 1e-6 for p, v in zip(preds, values[30:]))
    assert forecaster.residual_std == pytest.approx(1e-6)  # clamped at the floor


def test_fit_rejects_short_history():
    with pytest.raises(DetectorError):
        fit_forecaster(_series([1, 2, 3]), _ma_config(3))  # needs w + 1
    with pytest.raises(DetectorError):
        fit_forecaster(_series([1] * 7), DetectorConfig())  # AR needs max(2p, 8)


def test_constant_series_yields_no_findings():
    train = _series([30.0] * 12)
    config = _ma_config()
    forecaster = fit_forecaster(train, config)
    evaluated = _series([30.0] * 8, start=720.0)
    detector = ResidualDetector.for_metric("cpu", config)
    assert detect_residual_anomalies(evaluated, forecaster, detector) == []


def test_threshold_boundaries_and_severity():
    forecaster = Forecaster("moving_average", 3, 1.0, history_tail=(10.0, 10.0, 10.0))
    detector = ResidualDetector(lambda_spike=3.0, lambda_dip=3.0, severe_factor=2.0)

    def verdicts(value):
        found = detect_residual_anomalies(_series([value], start=300.0),
                                          forecaster, detector)
        return [(f.kind, f.severity) for f in found]

    assert verdicts(12.99) == []                                   # z just under
    assert verdicts(13.01) == [(Kind.SPIKE, Severity.WARNING)]
    assert verdicts(16.01) == [(Kind.SPIKE, Severity.SEVERE)]      # beyond 2 lambda
    assert verdicts(7.01) == []
    assert verdicts(6.99) == [(Kind.DIP, Severity.WARNING)]
    assert verdicts(3.99) == [(Kind.DIP, Severity.SEVERE)]


def test_findings_carry_provenance():
    forecaster = Forecaster("moving_average", 2, 2.0, history_tail=(20.0, 20.0))
    detector = ResidualDetector(3.0, 3.0)
    found = detect_residual_anomalies(_series([40.0], start=120.0), forecaster, detector)
    assert len(found) == 1
    f = found[0]
    assert f.detail == "120: SPIKE of cpu"
    assert (f.value, f.predicted, f.sigma) == (40.0, 20.0, 2.0)
    assert (f.value - f.predicted) / f.sigma == pytest.approx(10.0)
    assert f.source is Source.METRIC and f.pod == "api-0"


def test_sort_findings_is_deterministic():
    rng = random.Random(7)
    forecaster = Forecaster("moving_average", 1, 1.0, history_tail=(0.0,))
    detector = ResidualDetector(3.0, 3.0)
    found = detect_residual_anomalies(
        _series([10, -10, 10, -10, 10], start=0.0), forecaster, detector)
    assert len(found) == 5
    for _ in range(10):
        shuffled = found[:]
        rng.shuffle(shuffled)
        assert sort_findings(shuffled) == sort_findings(found)


def _edge_spans(caller, callee, interval_values, start=0.0, errors=()):
    """Three spans per interval whose mean duration is interval_values[i]."""
    spans = []
    n = 0
    for i, mean in enumerate(interval_values):
        for j, delta in enumerate((-1.0, 0.0, 1.0)):
            n += 1
            spans.append(SpanRecord(f"t{caller}{callee}{n}", f"s{n}", None, caller,
                                    callee, start + i * 60.0 + j * 5.0,
                                    mean + delta, "OK"))
    for i, count in errors:
        for j in range(count):
            n += 1
            spans.append(SpanRecord(f"e{caller}{callee}{n}", f"s{n}", None, caller,
                                    callee, start + i * 60.0 + j * 2.0, 1.0, "ERROR"))
    return spans


def test_trace_latency_spike_and_call_failures():
    window = TimeWindow(300.0, 600.0)
    config = _ma_config(3)
    # train intervals 0-4 at 50ms; eval interval 6 jumps to 200ms
    values = [50.0] * 5 + [50.0, 200.0, 50.0, 50.0, 50.0]
    # interval 7: 4 errors (over threshold 3), interval 8: 7 errors (severe)
    spans = _edge_spans("web", "api", values, errors=[(7, 4), (8, 7)])
    result = detect_trace_anomalies(spans, window, config)
    assert result.skipped_edges == 0
    kinds = [(f.kind, f.severity, f.timestamp) for f in result.findings]
    assert (Kind.LATENCY_SPIKE, Severity.SEVERE, 360.0) in kinds
    assert (Kind.CALL_FAILURE, Severity.WARNING, 420.0) in kinds
    assert (Kind.CALL_FAILURE, Severity.SEVERE, 480.0) in kinds
    assert all(f.service == "api" and f.subject == "web->api" for f in result.findings)
    assert all(f.pod is None for f in result.findings)
    failure = [f for f in result.findings
               if f.timestamp == 420.0 and f.kind is Kind.CALL_FAILURE][0]
    assert failure.value == 4.0


def test_trace_error_count_at_threshold_is_quiet():
    window = TimeWindow(300.0, 600.0)
    spans = _edge_spans("web", "api", [50.0] * 10, errors=[(6, 3)])
    result = detect_trace_anomalies(spans, window, _ma_config(3))
    assert [f for f in result.findings if f.kind is Kind.CALL_FAILURE] == []


def test_trace_skips_edges_without_history():
    window = TimeWindow(300.0, 600.0)
    # spans only inside the evaluation window: nothing to train on
    spans = _edge_spans("web", "api", [50.0] * 5, start=300.0)
    result = detect_trace_anomalies(spans, window, _ma_config(3))
    assert result.findings == []
    assert result.skipped_edges == 1


def test_trace_latency_dips_are_ignored():
    window = TimeWindow(300.0, 600.0)
    # dip in the last interval so it cannot skew later predictions
    values = [50.0] * 5 + [50.0, 50.0, 50.0, 50.0, 1.0]
    spans = _edge_spans("web", "api", values)
    result = detect_trace_anomalies(spans, window, _ma_config(3))
    assert result.findings == []


def test_trace_respects_edge_filter():
    window = TimeWindow(300.0, 600.0)
    values = [50.0] * 5 + [200.0] * 5
    spans = _edge_spans("web", "api", values) + _edge_spans("web", "db", values)
    result = detect_trace_anomalies(spans, window, _ma_config(3),
                                    edges=[("web", "api")])
    assert result.findings and all(f.service == "api" for f in result.findings)


def test_multivariate_check_flags_broken_relation():
    rng = random.Random(3)
    n = 40
    base = [rng.uniform(10, 20) for _ in range(n)]
    follower = [2.0 * b + 1.0 for b in base]
    follower[-3] += 500.0  # break the linear relation near the end
    s1 = _series(base, metric="m1")
    s2 = _series(follower, metric="m2")
    config = DetectorConfig()
    assert multivariate_check([s1, s2], config) is MultivariateVerdict.ANOMALY_EXISTING

    intact = _series([2.0 * b + 1.0 for b in base], metric="m2")
    assert multivariate_check([s1, intact], config) is MultivariateVerdict.ANOMALY_UNEXISTING


def test_multivariate_check_validates_alignment():
    s1 = _series([1, 2, 3])
    s2 = _series([1, 2, 3], start=30.0)
    with pytest.raises(DetectorError):
        multivariate_check([s1, s2], DetectorConfig())
    with pytest.raises(DetectorError):
        multivariate_check([s1], DetectorConfig())
