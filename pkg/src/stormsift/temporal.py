"""Co-occurrence statistics over time windows and Jaccard-based denoising.

All probabilities are computed against the set of emitted (non-empty)
windows: empty windows carry no signal. The index stores positions in the
window list it was built from, so windows pooled from several regions never
collide.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from .model import AlertType, TimeWindow

_EMPTY: frozenset[int] = frozenset()


@dataclass(frozen=True)
class OccurrenceIndex:
    """Per-alert-type window occurrence sets backing all temporal metrics."""

    total_windows: int
    windows_of: Mapping[str, frozenset[int]]

    def occurrences(self, t: AlertType | str) -> frozenset[int]:
        key = t.key if isinstance(t, AlertType) else t
        return self.windows_of.get(key, _EMPTY)

    def to_dict(self) -> dict[str, Any]:
        return {
            "total_windows": self.total_windows,
            "windows_of": {k: sorted(v) for k, v in sorted(self.windows_of.items())},
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "OccurrenceIndex":
        return cls(
            total_windows=int(d["total_windows"]),
            windows_of={k: frozenset(int(i) for i in v) for k, v in d["windows_of"].items()},
        )


def build_occurrence_index(
    windows: Sequence[TimeWindow], total_windows: int | None = None
) -> OccurrenceIndex:
    """Index window membership by alert type; positions are list positions.

    ``total_windows`` defaults to the number of emitted (non-empty) windows;
    pass the full slot count instead to make probabilities count empty
    windows too.
    """
    if not windows:
        raise ValueError("no windows")
    if total_windows is not None and total_windows < len(windows):
        raise ValueError("total_windows cannot be below the emitted window count")
    sets: dict[str, set[int]] = {}
    for pos, window in enumerate(windows):
        for key in window.member_types:
            sets.setdefault(key, set()).add(pos)
    return OccurrenceIndex(
        total_windows=total_windows if total_windows is not None else len(windows),
        windows_of={k: frozenset(v) for k, v in sets.items()},
    )


def occurrence_probability(index: OccurrenceIndex, t: AlertType | str) -> float:
    """Fraction of windows containing the type; 0 for unseen types."""
    return len(index.occurrences(t)) / index.total_windows


def joint_probability(index: OccurrenceIndex, a: AlertType | str, b: AlertType | str) -> float:
    return len(index.occurrences(a) & index.occurrences(b)) / index.total_windows


def conditional_probabilities(
    index: OccurrenceIndex, a: AlertType | str, b: AlertType | str
) -> tuple[float, float]:
    """Return ``(T_a_given_b, T_b_given_a)``.

    A zero-probability conditioning event yields 0 rather than an error, so
    unseen test-time types flow onward instead of crashing the pipeline.
    """
    wa, wb = index.occurrences(a), index.occurrences(b)
    joint = len(wa & wb)
    t_a_given_b = joint / len(wb) if wb else 0.0
    t_b_given_a = joint / len(wa) if wa else 0.0
    return t_a_given_b, t_b_given_a


def jaccard_similarity(index: OccurrenceIndex, a: AlertType | str, b: AlertType | str) -> float:
    """Intersection-over-union of the two types' window sets; 0 when both empty."""
    wa, wb = index.occurrences(a), index.occurrences(b)
    union = len(wa | wb)
    if union == 0:
        return 0.0
    return len(wa & wb) / union


def classify_noise(
    index: OccurrenceIndex, a: AlertType | str, b: AlertType | str, threshold: float
) -> bool:
    """True iff the pair's Jaccard similarity is strictly below the threshold.

    Noise pairs are decided NotCorrelated outright and bypass both the fusion
    gate and the LLM stage.
    """
    if not (0.0 <= threshold <= 1.0):
        raise ValueError("threshold must be in [0, 1]")
    return jaccard_similarity(index, a, b) < threshold


def noise_alert_types(
    index: OccurrenceIndex,
    threshold: float,
    min_occupancy: float = 0.5,
    min_small_partner_fraction: float = 0.5,
) -> set[str]:
    """Identify regular "reminder" alert types whose instances carry no signal.

    A type counts as noise when it occupies at least ``min_occupancy`` of all
    windows (it appears evenly, the hallmark of scheduled alerts) and at least
    ``min_small_partner_fraction`` of the types it shares windows with fall
    below the pair-level Jaccard threshold. Occupancy is the discriminating
    condition: genuine failure types live in storm bursts and cannot cover
    half of all windows. Instances of noise types are discarded before
    clustering; pair verdicts still record them.
    """
    noisy: set[str] = set()
    keys = sorted(index.windows_of)
    for key in keys:
        own = index.occurrences(key)
        if len(own) / index.total_windows < min_occupancy:
            continue
        partners = [k for k in keys if k != key and own & index.occurrences(k)]
        if not partners:
            continue
        small = sum(
            1 for k in partners if jaccard_similarity(index, key, k) < threshold
        )
        if small / len(partners) >= min_small_partner_fraction:
            noisy.add(key)
    return noisy
