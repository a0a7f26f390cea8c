"""Configuration blocks shared by the detectors, log miner, and alarm watcher.

Everything is plain dataclasses loaded from a single JSON file so that one
``--config`` flag can pin the whole detection behaviour of a run. Unknown keys
are rejected instead of silently ignored.
"""

from __future__ import annotations

import fnmatch
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


def _check_keys(block: dict, allowed: set[str], where: str) -> None:
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


@dataclass
class ModelConfig:
    """Forecaster choice for residual detection."""

    kind: str = "ar"          # "ar" | "moving_average"
    p: int = 3                # AR order
    window: int = 5           # moving-average width

    def __post_init__(self) -> None:
        if self.kind not in ("ar", "moving_average"):
            raise ConfigError(f"unknown forecaster kind: {self.kind!r}")
        if self.p < 1 or self.window < 1:
            raise ConfigError("model orders must be >= 1")


@dataclass
class LogMiningConfig:
    keywords: tuple[str, ...] = ("error", "exception", "fail", "timeout", "fatal")
    severe_keywords: tuple[str, ...] = ("error", "exception", "fatal")
    drain_depth: int = 4
    similarity_threshold: float = 0.4
    max_children: int = 100
    max_samples: int = 3
    template_budget: int = 20
    evidence_cap: int = 30
    gmm_components: int = 2
    gmm_seed: int = 42
    gmm_iterations: int = 100

    def __post_init__(self) -> None:
        if self.drain_depth < 3:
            raise ConfigError("drain_depth must be >= 3")
        if not 0.0 < self.similarity_threshold <= 1.0:
            raise ConfigError("similarity_threshold must be in (0, 1]")
        if self.template_budget < 1 or self.evidence_cap < 1:
            raise ConfigError("budgets must be >= 1")
        self.keywords = tuple(k.lower() for k in self.keywords)
        self.severe_keywords = tuple(k.lower() for k in self.severe_keywords)


@dataclass
class MetricBound:
    """Static alarm rule: breach when a matching metric leaves [min, max]."""

    metric: str
    min: float | None = None
    max: float | None = None

    def breached(self, metric_name: str, value: float) -> bool:
        if not fnmatch.fnmatch(metric_name, self.metric):
            return False
        if self.min is not None and value < self.min:
            return True
        if self.max is not None and value > self.max:
            return True
        return False


@dataclass
class AlarmRules:
    keyword_count: int = 3        # keyword log lines per sub-window
    error_span_count: int = 3     # ERROR spans per sub-window
    sub_window_seconds: float = 60.0
    metric_bounds: tuple[MetricBound, ...] = ()

    def __post_init__(self) -> None:
        if self.keyword_count < 1 or self.error_span_count < 1:
            raise ConfigError("alarm counts must be >= 1")
        if self.sub_window_seconds <= 0:
            raise ConfigError("sub_window_seconds must be > 0")


@dataclass
class MultivariateConfig:
    enabled: bool = False
    train_fraction: float = 0.5

    def __post_init__(self) -> None:
        if not 0.1 <= self.train_fraction <= 0.9:
            raise ConfigError("train_fraction must be in [0.1, 0.9]")


@dataclass
class DetectorConfig:
    """Per-run detection settings; see docs in README for the JSON layout."""

    model: ModelConfig = field(default_factory=ModelConfig)
    lambda_spike: float = 3.0
    lambda_dip: float = 3.0
    lambda_overrides: dict[str, dict[str, float]] = field(default_factory=dict)
    epsilon_sigma: float = 1e-6
    severe_factor: float = 2.0
    interval_seconds: float = 60.0
    failure_threshold: int = 3
    multivariate: MultivariateConfig = field(default_factory=MultivariateConfig)
    logs: LogMiningConfig = field(default_factory=LogMiningConfig)
    alarms: AlarmRules = field(default_factory=AlarmRules)

    def __post_init__(self) -> None:
        if self.lambda_spike <= 0 or self.lambda_dip <= 0:
            raise ConfigError("thresholds must be > 0")
        if self.epsilon_sigma <= 0:
            raise ConfigError("epsilon_sigma must be > 0")
        if self.interval_seconds <= 0:
            raise ConfigError("interval_seconds must be > 0")
        for pattern, block in self.lambda_overrides.items():
            _check_keys(block, {"spike", "dip"}, f"lambda_overrides[{pattern!r}]")

    def thresholds_for(self, metric_name: str) -> tuple[float, float]:
        """Resolve (lambda_spike, lambda_dip) for a metric, first glob wins."""
        spike, dip = self.lambda_spike, self.lambda_dip
        for pattern, block in self.lambda_overrides.items():
            if fnmatch.fnmatch(metric_name, pattern):
                spike = float(block.get("spike", spike))
                dip = float(block.get("dip", dip))
                break
        return spike, dip

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "DetectorConfig":
        allowed = {
            "model", "lambda_spike", "lambda_dip", "lambda_overrides",
            "epsilon_sigma", "severe_factor", "interval_seconds",
            "failure_threshold", "multivariate", "logs", "alarms",
        }
        _check_keys(raw, allowed, "detector config")
        kwargs: dict[str, Any] = dict(raw)
        if "model" in raw:
            _check_keys(raw["model"], {"kind", "p", "window"}, "model")
            kwargs["model"] = ModelConfig(**raw["model"])
        if "multivariate" in raw:
            _check_keys(raw["multivariate"], {"enabled", "train_fraction"}, "multivariate")
            kwargs["multivariate"] = MultivariateConfig(**raw["multivariate"])
        if "logs" in raw:
            _check_keys(raw["logs"], {f.name for f in LogMiningConfig.__dataclass_fields__.values()}, "logs")
            block = dict(raw["logs"])
            for key in ("keywords", "severe_keywords"):
                if key in block:
                    block[key] = tuple(block[key])
            kwargs["logs"] = LogMiningConfig(**block)
        if "alarms" in raw:
            _check_keys(raw["alarms"], {"keyword_count", "error_span_count",
                                        "sub_window_seconds", "metric_bounds"}, "alarms")
            block = dict(raw["alarms"])
            bounds = []
            for item in block.pop("metric_bounds", []):
                _check_keys(item, {"metric", "min", "max"}, "metric_bounds entry")
                bounds.append(MetricBound(**item))
            kwargs["alarms"] = AlarmRules(metric_bounds=tuple(bounds), **block)
        return cls(**kwargs)


def load_detector_config(path: str | Path) -> DetectorConfig:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("detector config must be a JSON object")
    return DetectorConfig.from_dict(raw)
