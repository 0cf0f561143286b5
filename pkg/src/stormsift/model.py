"""Domain types shared across the aggregation pipeline.

Everything here is an immutable value object: construction validates the
invariants, after which instances are safe to share across threads. Each type
serializes to a plain JSON-compatible dict via ``to_dict`` / ``from_dict``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Mapping, Optional


class ValidationError(ValueError):
    """Raised when a record violates a model invariant."""


class Severity(str, Enum):
    CRITICAL = "critical"
    MAJOR = "major"
    MINOR = "minor"
    WARNING = "warning"


class Decision(str, Enum):
    """Routing decision for one alert-type pair."""

    CORRELATED = "correlated"
    UNCERTAIN = "uncertain"
    NOISE = "noise"


class VerdictLabel(str, Enum):
    CORRELATED = "correlated"
    NOT_CORRELATED = "not_correlated"


class VerdictSource(str, Enum):
    STATISTICAL = "statistical"
    LLM_REASONING = "llm_reasoning"
    NOISE_FILTER = "noise_filter"


@dataclass(frozen=True)
class Alert:
    """One monitoring event instance.

    Timestamps are integer epoch seconds (UTC). ``arrival_time`` drives all
    window math; ``creation_time`` must not exceed it.
    """

    id: str
    title: str
    creation_time: int
    arrival_time: int
    service: str
    region: str
    sop_id: str
    mitigated_time: Optional[int] = None
    engineer: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValidationError("alert id must be non-empty")
        if self.creation_time > self.arrival_time:
            raise ValidationError(
                f"alert {self.id}: creation_time {self.creation_time} after "
                f"arrival_time {self.arrival_time}"
            )
        if self.mitigated_time is not None and self.mitigated_time < self.arrival_time:
            raise ValidationError(
                f"alert {self.id}: mitigated_time before arrival_time"
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "title": self.title,
            "creation_time": self.creation_time,
            "arrival_time": self.arrival_time,
            "mitigated_time": self.mitigated_time,
            "service": self.service,
            "region": self.region,
            "engineer": self.engineer,
            "sop_id": self.sop_id,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Alert":
        return cls(
            id=str(d["id"]),
            title=str(d["title"]),
            creation_time=int(d["creation_time"]),
            arrival_time=int(d["arrival_time"]),
            mitigated_time=None if d.get("mitigated_time") is None else int(d["mitigated_time"]),
            service=str(d["service"]),
            region=str(d["region"]),
            engineer=None if d.get("engineer") is None else str(d["engineer"]),
            sop_id=str(d["sop_id"]),
        )


@dataclass(frozen=True)
class AlertType:
    """The per-definition identity of an alert.

    All pair statistics are keyed by alert definition (the sop_id), not by
    instance: occurrence frequency across windows is only meaningful for
    recurring definitions.
    """

    key: str
    service: str

    def __post_init__(self) -> None:
        if not self.key:
            raise ValidationError("alert type key must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {"key": self.key, "service": self.service}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AlertType":
        return cls(key=str(d["key"]), service=str(d["service"]))


def alert_type_of(alert: Alert) -> AlertType:
    """Map an alert instance to its type; equal sop_id means equal type."""
    if not alert.sop_id:
        raise ValidationError(f"alert {alert.id}: missing sop_id")
    return AlertType(key=alert.sop_id, service=alert.service)


@dataclass(frozen=True)
class SopDocument:
    """Structured alert-handling knowledge for one alert definition."""

    id: str
    title: str
    severity: Severity
    explanation: str
    impact: str
    possible_cause: str
    mitigation_steps: str

    def __post_init__(self) -> None:
        if not self.id:
            raise ValidationError("sop id must be non-empty")
        if not self.title:
            raise ValidationError(f"sop {self.id}: title must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "title": self.title,
            "severity": self.severity.value,
            "explanation": self.explanation,
            "impact": self.impact,
            "possible_cause": self.possible_cause,
            "mitigation_steps": self.mitigation_steps,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SopDocument":
        return cls(
            id=str(d["id"]),
            title=str(d["title"]),
            severity=Severity(d["severity"]),
            explanation=str(d["explanation"]),
            impact=str(d["impact"]),
            possible_cause=str(d["possible_cause"]),
            mitigation_steps=str(d["mitigation_steps"]),
        )


SUMMARY_FIELD_BUDGET = 400


@dataclass(frozen=True)
class SopSummary:
    """Condensed SOP knowledge, one field per document section."""

    sop_id: str
    explanation_summary: str
    impact_summary: str
    cause_summary: str
    steps_summary: str
    field_budget: int = SUMMARY_FIELD_BUDGET

    def __post_init__(self) -> None:
        for name in ("explanation_summary", "impact_summary", "cause_summary", "steps_summary"):
            if len(getattr(self, name)) > self.field_budget:
                raise ValidationError(
                    f"summary for {self.sop_id}: {name} exceeds budget of "
                    f"{self.field_budget} chars"
                )

    def to_dict(self) -> dict[str, Any]:
        return {
            "sop_id": self.sop_id,
            "explanation_summary": self.explanation_summary,
            "impact_summary": self.impact_summary,
            "cause_summary": self.cause_summary,
            "steps_summary": self.steps_summary,
            "field_budget": self.field_budget,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SopSummary":
        return cls(
            sop_id=str(d["sop_id"]),
            explanation_summary=str(d["explanation_summary"]),
            impact_summary=str(d["impact_summary"]),
            cause_summary=str(d["cause_summary"]),
            steps_summary=str(d["steps_summary"]),
            field_budget=int(d.get("field_budget", SUMMARY_FIELD_BUDGET)),
        )


@dataclass(frozen=True)
class WindowingConfig:
    """Sliding-window parameters.

    Windows are half-open ``[start, end)``; window ``k`` starts at
    ``start_time + k * step`` where ``step = slide_fraction * window_length``
    must be a whole number of seconds so all boundary math stays integral.
    """

    start_time: int
    window_length: int = 600
    slide_fraction: Fraction = Fraction(1, 2)

    def __post_init__(self) -> None:
        if self.window_length <= 0:
            raise ValidationError("window_length must be positive")
        s = Fraction(self.slide_fraction)
        if not (0 < s <= 1):
            raise ValidationError("slide_fraction must be in (0, 1]")
        object.__setattr__(self, "slide_fraction", s)
        if (s * self.window_length).denominator != 1:
            raise ValidationError(
                "slide_fraction * window_length must be an integer number of seconds"
            )

    @property
    def step(self) -> int:
        return int(self.slide_fraction * self.window_length)

    def window_span(self, k: int) -> tuple[int, int]:
        start = self.start_time + k * self.step
        return start, start + self.window_length

    def to_dict(self) -> dict[str, Any]:
        return {
            "start_time": self.start_time,
            "window_length": self.window_length,
            "slide_fraction": f"{self.slide_fraction.numerator}/{self.slide_fraction.denominator}",
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "WindowingConfig":
        raw = d.get("slide_fraction", "1/2")
        frac = Fraction(raw) if not isinstance(raw, Fraction) else raw
        return cls(
            start_time=int(d["start_time"]),
            window_length=int(d.get("window_length", 600)),
            slide_fraction=frac,
        )


@dataclass(frozen=True)
class TimeWindow:
    """One materialized sliding window and the alert types seen in it."""

    index: int
    start: int
    end: int
    member_types: frozenset[str]

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValidationError("window index must be non-negative")
        if self.end <= self.start:
            raise ValidationError("window end must be after start")
        object.__setattr__(self, "member_types", frozenset(self.member_types))

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "start": self.start,
            "end": self.end,
            "member_types": sorted(self.member_types),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TimeWindow":
        return cls(
            index=int(d["index"]),
            start=int(d["start"]),
            end=int(d["end"]),
            member_types=frozenset(str(t) for t in d["member_types"]),
        )


@dataclass(frozen=True)
class FusionConfig:
    """Parameters of the combined temporal/spatial similarity score."""

    alpha: float = 3.5
    s_min: float = 0.0
    s_max: float = 1.0
    jaccard_noise_threshold: float = 0.05

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ValidationError("alpha must be non-negative")
        if self.s_min > self.s_max:
            raise ValidationError("s_min must not exceed s_max")
        if not (0 <= self.jaccard_noise_threshold <= 1):
            raise ValidationError("jaccard_noise_threshold must be in [0, 1]")

    @property
    def degenerate(self) -> bool:
        return self.s_min == self.s_max

    def to_dict(self) -> dict[str, Any]:
        return {
            "alpha": self.alpha,
            "s_min": self.s_min,
            "s_max": self.s_max,
            "jaccard_noise_threshold": self.jaccard_noise_threshold,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FusionConfig":
        return cls(
            alpha=float(d.get("alpha", 3.5)),
            s_min=float(d.get("s_min", 0.0)),
            s_max=float(d.get("s_max", 1.0)),
            jaccard_noise_threshold=float(d.get("jaccard_noise_threshold", 0.05)),
        )


@dataclass(frozen=True)
class PairScore:
    """All per-pair evidence plus the routing decision."""

    a: AlertType
    b: AlertType
    t_ab: float
    t_ba: float
    jaccard: float
    spatial_distance: float
    similarity_score: float
    decision: Decision

    def __post_init__(self) -> None:
        for name in ("t_ab", "t_ba", "jaccard"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValidationError(f"{name}={v} outside [0, 1]")
        if self.spatial_distance < 0:
            raise ValidationError("spatial_distance must be non-negative")
        if self.decision is Decision.CORRELATED and self.similarity_score <= 0:
            raise ValidationError("correlated decision requires a positive score")
        if self.decision is Decision.UNCERTAIN and self.similarity_score > 0:
            raise ValidationError("positive score cannot be uncertain")

    def to_dict(self) -> dict[str, Any]:
        return {
            "a": self.a.to_dict(),
            "b": self.b.to_dict(),
            "t_ab": self.t_ab,
            "t_ba": self.t_ba,
            "jaccard": self.jaccard,
            "spatial_distance": self.spatial_distance,
            "similarity_score": self.similarity_score,
            "decision": self.decision.value,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PairScore":
        return cls(
            a=AlertType.from_dict(d["a"]),
            b=AlertType.from_dict(d["b"]),
            t_ab=float(d["t_ab"]),
            t_ba=float(d["t_ba"]),
            jaccard=float(d["jaccard"]),
            spatial_distance=float(d["spatial_distance"]),
            similarity_score=float(d["similarity_score"]),
            decision=Decision(d["decision"]),
        )


@dataclass(frozen=True)
class CorrelationVerdict:
    """Final correlated/not-correlated call for one alert-type pair."""

    pair: tuple[AlertType, AlertType]
    label: VerdictLabel
    source: VerdictSource
    explanation: str = ""

    def __post_init__(self) -> None:
        if self.source is VerdictSource.LLM_REASONING and not self.explanation:
            raise ValidationError("llm verdicts must carry an explanation")

    def to_dict(self) -> dict[str, Any]:
        return {
            "pair": [self.pair[0].to_dict(), self.pair[1].to_dict()],
            "label": self.label.value,
            "source": self.source.value,
            "explanation": self.explanation,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "CorrelationVerdict":
        a, b = d["pair"]
        return cls(
            pair=(AlertType.from_dict(a), AlertType.from_dict(b)),
            label=VerdictLabel(d["label"]),
            source=VerdictSource(d["source"]),
            explanation=str(d.get("explanation", "")),
        )


@dataclass(frozen=True)
class AlertCluster:
    """A group of alert instances attributed to one root cause."""

    members: frozenset[str]
    region: str

    def __post_init__(self) -> None:
        if not self.members:
            raise ValidationError("cluster must have at least one member")
        object.__setattr__(self, "members", frozenset(self.members))

    def to_dict(self) -> dict[str, Any]:
        return {"members": sorted(self.members), "region": self.region}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AlertCluster":
        return cls(members=frozenset(str(m) for m in d["members"]), region=str(d["region"]))


@dataclass(frozen=True)
class Metrics:
    """Confusion counts and the derived precision/recall/F1.

    A zero denominator yields 0 rather than an error so empty test sets still
    produce defined output.
    """

    tp: int
    fp: int
    fn: int
    tn: int
    precision: float = field(init=False)
    recall: float = field(init=False)
    f1: float = field(init=False)

    def __post_init__(self) -> None:
        for name in ("tp", "fp", "fn", "tn"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        precision = self.tp / (self.tp + self.fp) if (self.tp + self.fp) else 0.0
        recall = self.tp / (self.tp + self.fn) if (self.tp + self.fn) else 0.0
        f1 = (
            2.0 * precision * recall / (precision + recall)
            if (precision + recall)
            else 0.0
        )
        object.__setattr__(self, "precision", precision)
        object.__setattr__(self, "recall", recall)
        object.__setattr__(self, "f1", f1)

    def to_dict(self) -> dict[str, Any]:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "tn": self.tn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Metrics":
        return cls(tp=int(d["tp"]), fp=int(d["fp"]), fn=int(d["fn"]), tn=int(d["tn"]))


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)
