"""Root cause analysis for microservice incidents.

The package walks a fault mining tree built from alarmed services with Monte
Carlo tree search; per-service anomaly evidence (metric residuals, mined log
templates, trace latency and failure checks) drives rule-based or externally
hosted scoring, and a knowledge base can short-circuit the search when an
incident replays a stored case.
"""

from .alarms import AlarmScan, scan_alarms
from .config import (
    AlarmRules,
    ConfigError,
    DetectorConfig,
    LogMiningConfig,
    MetricBound,
    ModelConfig,
    load_detector_config,
)
from .detectors import (
    AnomalyFinding,
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
    sort_findings,
)
from .faultgraph import (
    VIRTUAL_ROOT,
    FaultMiningTree,
    GraphError,
    build_fault_mining_tree,
    extract_alarm_topology,
)
from .knowledge import (
    CaseRecord,
    ExpertRule,
    KnowledgeBase,
    KnowledgeError,
    confirm_match,
    fingerprint_of,
    jaccard,
    secondary_match,
)
from .logmining import (
    FilterMode,
    LogTemplate,
    choose_filter_mode,
    drain_parse,
    keyword_filter,
    second_stage_filter,
    summarize_log_evidence,
)
from .mcts import (
    DiagnosisReport,
    FaultSearch,
    MctsConfig,
    SearchAgents,
    SearchError,
    run_search,
    uct,
)
from .oracle import ChatMessage, OracleAdapter, OracleConfig, OracleError, parse_marked
from .pipeline import EvidenceMiner, PipelineResult, case_from_report, run_diagnosis
from .telemetry import (
    DependencyGraph,
    LogRecord,
    MetricSeries,
    SpanRecord,
    TelemetryError,
    TimeWindow,
    dependency_from_spans,
    load_logs,
    load_metrics,
    load_spans,
    load_topology,
    pod_service,
)
from .verdict import (
    DEFAULT_TAXONOMY,
    FaultTypeEntry,
    GranularityCall,
    TaxonomyEntry,
    classify_fault_type,
    refine_granularity,
    score_children,
    score_simulation,
)

__version__ = "0.1.0"

__all__ = [
    "AlarmRules", "AlarmScan", "AnomalyFinding", "CaseRecord", "ChatMessage",
    "ConfigError", "DEFAULT_TAXONOMY", "DependencyGraph", "DetectorConfig",
    "DetectorError", "DiagnosisReport", "EvidenceMiner", "ExpertRule",
    "FaultMiningTree", "FaultSearch", "FaultTypeEntry", "FilterMode",
    "Forecaster", "GranularityCall", "GraphError", "Kind", "KnowledgeBase",
    "KnowledgeError", "LogMiningConfig", "LogRecord", "LogTemplate",
    "MctsConfig", "MetricBound", "MetricSeries", "ModelConfig", "OracleAdapter",
    "OracleConfig", "OracleError", "PipelineResult", "ResidualDetector",
    "SearchAgents", "SearchError", "Severity", "Source", "SpanRecord",
    "TaxonomyEntry", "TelemetryError", "TimeWindow", "VIRTUAL_ROOT",
    "build_fault_mining_tree", "case_from_report", "choose_filter_mode",
    "classify_fault_type", "confirm_match", "dependency_from_spans",
    "detect_residual_anomalies", "detect_trace_anomalies", "drain_parse",
    "extract_alarm_topology", "fingerprint_of", "fit_forecaster", "jaccard",
    "keyword_filter", "load_detector_config", "load_logs", "load_metrics",
    "load_spans", "load_topology", "multivariate_check", "parse_marked",
    "pod_service", "refine_granularity", "run_diagnosis", "run_search",
    "scan_alarms", "score_children", "score_simulation", "secondary_match",
    "second_stage_filter", "sort_findings", "summarize_log_evidence", "uct",
]
