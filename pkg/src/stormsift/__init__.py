"""Hybrid alert aggregation: statistical correlation mining filters the
confident pairs, and LLM reasoning over per-alert SOP knowledge resolves the
uncertain remainder."""

from .model import (
    Alert,
    AlertCluster,
    AlertType,
    CorrelationVerdict,
    Decision,
    FusionConfig,
    Metrics,
    PairScore,
    Severity,
    SopDocument,
    SopSummary,
    TimeWindow,
    ValidationError,
    VerdictLabel,
    VerdictSource,
    WindowingConfig,
    alert_type_of,
)

__version__ = "0.1.0"

__all__ = [
    "Alert",
    "AlertCluster",
    "AlertType",
    "CorrelationVerdict",
    "Decision",
    "FusionConfig",
    "Metrics",
    "PairScore",
    "Severity",
    "SopDocument",
    "SopSummary",
    "TimeWindow",
    "ValidationError",
    "VerdictLabel",
    "VerdictSource",
    "WindowingConfig",
    "alert_type_of",
    "__version__",
]
