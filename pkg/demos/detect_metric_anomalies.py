"""Walk through the metric route: fit a forecaster, then flag residual spikes.

A service's cpu metric is modeled on an hour of healthy data. During the next
half hour the pod misbehaves for three minutes. The detector standardizes each
one-step prediction error and reports points whose z-score clears the
threshold, escalating to SEVERE past twice the threshold.

Note how the moving average also reports DIPs right after the burn ends: the
fault minutes inflate its trailing window, so the recovery reads as a drop.
The autoregressive model re-anchors faster and only flags the onset.

Run: python3 demos/detect_metric_anomalies.py
"""

import random

from faultminer.config import DetectorConfig, ModelConfig
from faultminer.detectors import (
    ResidualDetector,
    detect_residual_anomalies,
    fit_forecaster,
)
from faultminer.telemetry import MetricSeries, format_ts


def build_series(rng):
    # healthy hour for training, then a 30 minute evaluation window with a
    # planted burn between minutes 12 and 14
    train_points = []
    for minute in range(60):
        train_points.append((minute * 60.0, 40.0 + rng.gauss(0.0, 1.5)))
    eval_points = []
    for minute in range(30):
        value = 40.0 + rng.gauss(0.0, 1.5)
        if 12 <= minute <= 14:
            value += 35.0
        eval_points.append((3600.0 + minute * 60.0, value))
    train = MetricSeries("checkout", "checkout-0", "cpu_usage", tuple(train_points))
    evaluation = MetricSeries("checkout", "checkout-0", "cpu_usage", tuple(eval_points))
    return train, evaluation


def main():
    rng = random.Random(42)
    train, evaluation = build_series(rng)

    for model in (ModelConfig(kind="ar", p=3),
                  ModelConfig(kind="moving_average", window=5)):
        config = DetectorConfig(model=model)
        forecaster = fit_forecaster(train, config)
        detector = ResidualDetector.for_metric("cpu_usage", config)
        findings = detect_residual_anomalies(evaluation, forecaster, detector)

        print(f"model={model.kind} order={forecaster.order} "
              f"residual_std={forecaster.residual_std:.3f}")
        for f in findings:
            z = (f.value - f.predicted) / f.sigma
            print(f"  {format_ts(f.timestamp)}  {f.kind.value:<5} "
                  f"{f.severity.value:<8} value={f.value:6.1f} "
                  f"predicted={f.predicted:6.1f} z={z:+.1f}")
        print(f"  detail of first finding: {findings[0].detail!r}")
        print()


if __name__ == "__main__":
    main()
