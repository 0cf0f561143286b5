"""Dataset loading, region partitioning, sliding windows, chronological split.

File formats: alerts are JSON lines, SOPs are one markdown file per document
with a leading metadata block and ``##`` section headers, labels are JSON
lines of ``{"group": [alert ids]}``. Malformed records are skipped with a
warning; unreadable paths are fatal.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .model import (
    Alert,
    Severity,
    SopDocument,
    TimeWindow,
    ValidationError,
    WindowingConfig,
    alert_type_of,
)

log = logging.getLogger(__name__)

SOP_SECTION_HEADERS = {
    "## Explanation": "explanation",
    "## Impact": "impact",
    "## Possible Cause": "possible_cause",
    "## Mitigation Steps": "mitigation_steps",
}


@dataclass
class Dataset:
    """Alerts plus the SOP catalog they reference, with optional truth groups."""

    alerts: list[Alert]
    sops: dict[str, SopDocument]
    labels: list[set[str]] | None = None
    warnings: list[str] = field(default_factory=list)

    def alert_by_id(self) -> dict[str, Alert]:
        return {a.id: a for a in self.alerts}


def _warn(warnings: list[str], msg: str) -> None:
    warnings.append(msg)
    log.warning(msg)


def parse_sop_file(path: Path) -> SopDocument:
    """Parse one SOP markdown file: metadata lines, then headed sections."""
    meta: dict[str, str] = {}
    sections = {name: [] for name in SOP_SECTION_HEADERS.values()}
    current: list[str] | None = None
    for line in path.read_text(encoding="utf-8").splitlines():
        stripped = line.strip()
        if stripped in SOP_SECTION_HEADERS:
            current = sections[SOP_SECTION_HEADERS[stripped]]
            continue
        if current is not None:
            current.append(line)
            continue
        if ":" in stripped and stripped:
            key, _, value = stripped.partition(":")
            meta[key.strip().lower()] = value.strip()
    if "id" not in meta or "title" not in meta or "severity" not in meta:
        raise ValidationError(f"{path.name}: missing id/title/severity metadata")
    return SopDocument(
        id=meta["id"],
        title=meta["title"],
        severity=Severity(meta["severity"].lower()),
        explanation="\n".join(sections["explanation"]).strip(),
        impact="\n".join(sections["impact"]).strip(),
        possible_cause="\n".join(sections["possible_cause"]).strip(),
        mitigation_steps="\n".join(sections["mitigation_steps"]).strip(),
    )


def load_sop_catalog(sop_dir: Path, warnings: list[str]) -> dict[str, SopDocument]:
    if not sop_dir.is_dir():
        raise FileNotFoundError(f"SOP directory not found: {sop_dir}")
    catalog: dict[str, SopDocument] = {}
    for path in sorted(sop_dir.glob("*.md")):
        try:
            sop = parse_sop_file(path)
        except (ValidationError, ValueError) as exc:
            _warn(warnings, f"skipping SOP file {path.name}: {exc}")
            continue
        if sop.id in catalog:
            _warn(warnings, f"duplicate SOP id {sop.id} in {path.name}, keeping first")
            continue
        catalog[sop.id] = sop
    return catalog


def load_dataset(
    alerts_path: str | Path,
    sop_dir: str | Path,
    labels_path: str | Path | None = None,
) -> Dataset:
    """Load and cross-validate alerts, SOPs and optional truth groups.

    Alerts referencing an unknown SOP and malformed lines are skipped with a
    warning (carrying the line number); a missing file raises.
    """
    alerts_path = Path(alerts_path)
    sop_dir = Path(sop_dir)
    if not alerts_path.is_file():
        raise FileNotFoundError(f"alerts file not found: {alerts_path}")

    warnings: list[str] = []
    sops = load_sop_catalog(sop_dir, warnings)

    alerts: list[Alert] = []
    seen_ids: set[str] = set()
    with alerts_path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                alert = Alert.from_dict(record)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                _warn(warnings, f"alerts line {lineno}: skipped malformed record ({exc})")
                continue
            if alert.id in seen_ids:
                _warn(warnings, f"alerts line {lineno}: duplicate id {alert.id}, skipped")
                continue
            if alert.sop_id not in sops:
                _warn(
                    warnings,
                    f"alerts line {lineno}: unresolvable sop_id {alert.sop_id!r}, skipped",
                )
                continue
            seen_ids.add(alert.id)
            alerts.append(alert)

    labels: list[set[str]] | None = None
    if labels_path is not None:
        labels_path = Path(labels_path)
        if not labels_path.is_file():
            raise FileNotFoundError(f"labels file not found: {labels_path}")
        labels = []
        claimed: set[str] = set()
        with labels_path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    group = set(str(x) for x in json.loads(line)["group"])
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    _warn(warnings, f"labels line {lineno}: skipped malformed group ({exc})")
                    continue
                unknown = group - seen_ids
                if unknown:
                    _warn(
                        warnings,
                        f"labels line {lineno}: dropping unknown alert ids {sorted(unknown)}",
                    )
                    group -= unknown
                overlap = group & claimed
                if overlap:
                    _warn(
                        warnings,
                        f"labels line {lineno}: group overlaps earlier group "
                        f"({sorted(overlap)}), skipped",
                    )
                    continue
                if group:
                    claimed |= group
                    labels.append(group)

    return Dataset(alerts=alerts, sops=sops, labels=labels, warnings=warnings)


def partition_by_region(dataset: Dataset) -> dict[str, list[Alert]]:
    """Split alerts by region, each list sorted by arrival time then id."""
    regions: dict[str, list[Alert]] = {}
    for alert in dataset.alerts:
        regions.setdefault(alert.region, []).append(alert)
    for alerts in regions.values():
        alerts.sort(key=lambda a: (a.arrival_time, a.id))
    return dict(sorted(regions.items()))


def covering_window_indices(t: int, cfg: WindowingConfig) -> list[int]:
    """All integer window indices whose span ``[start, end)`` contains ``t``.

    This enumerates the unclipped index family, so with slide 1/2 every
    timestamp lies in exactly two spans (indices ``k-1`` and ``k``); near the
    stream start the lower index may be negative and is only materialized by
    :func:`divide_into_windows` when non-negative.
    """
    step = cfg.step
    hi = (t - cfg.start_time) // step
    lo = (t - cfg.start_time - cfg.window_length) // step + 1
    return list(range(lo, hi + 1))


def materialized_window_indices(t: int, cfg: WindowingConfig) -> list[int]:
    """Covering indices clipped to the non-negative windows that actually exist."""
    return [k for k in covering_window_indices(t, cfg) if k >= 0]


def default_start_time(alerts: Sequence[Alert]) -> int:
    """Default window origin: earliest arrival, floored to the minute."""
    if not alerts:
        raise ValidationError("cannot derive a start time from an empty alert list")
    return (min(a.arrival_time for a in alerts) // 60) * 60


def divide_into_windows(
    alerts: Sequence[Alert],
    cfg: WindowingConfig,
    warnings: list[str] | None = None,
) -> list[TimeWindow]:
    """Assign alerts to sliding windows; windows with no members are omitted.

    An alert with arrival time ``t`` joins every materialized window with
    ``start <= t < end``. Alerts arriving before the configured start time are
    skipped with a warning.
    """
    members: dict[int, set[str]] = {}
    for alert in alerts:
        if alert.arrival_time < cfg.start_time:
            msg = (
                f"alert {alert.id} arrives at {alert.arrival_time}, before window "
                f"start {cfg.start_time}; skipped"
            )
            if warnings is not None:
                warnings.append(msg)
            log.warning(msg)
            continue
        key = alert_type_of(alert).key
        for k in materialized_window_indices(alert.arrival_time, cfg):
            members.setdefault(k, set()).add(key)
    windows = []
    for k in sorted(members):
        start, end = cfg.window_span(k)
        windows.append(TimeWindow(index=k, start=start, end=end, member_types=frozenset(members[k])))
    return windows


def split_chronologically(dataset: Dataset, cutoff: int) -> tuple[Dataset, Dataset]:
    """Split into train (arrival < cutoff) and test; the SOP catalog is shared.

    A truth group spanning the cutoff is assigned to the side holding its
    earliest alert and pruned of members on the other side.
    """
    train_alerts = [a for a in dataset.alerts if a.arrival_time < cutoff]
    test_alerts = [a for a in dataset.alerts if a.arrival_time >= cutoff]
    warnings: list[str] = []
    if not train_alerts or not test_alerts:
        _warn(warnings, f"cutoff {cutoff} leaves one side of the split empty")

    train_labels: list[set[str]] | None = None
    test_labels: list[set[str]] | None = None
    if dataset.labels is not None:
        arrival = {a.id: a.arrival_time for a in dataset.alerts}
        train_labels, test_labels = [], []
        for group in dataset.labels:
            earliest = min(group, key=lambda i: (arrival[i], i))
            if arrival[earliest] < cutoff:
                pruned = {i for i in group if arrival[i] < cutoff}
                dest = train_labels
            else:
                pruned = {i for i in group if arrival[i] >= cutoff}
                dest = test_labels
            if len(pruned) != len(group):
                _warn(warnings, f"truth group pruned across cutoff: kept {len(pruned)} of {len(group)}")
            if pruned:
                dest.append(pruned)

    train = Dataset(alerts=train_alerts, sops=dataset.sops, labels=train_labels, warnings=warnings)
    test = Dataset(alerts=test_alerts, sops=dataset.sops, labels=test_labels, warnings=list(warnings))
    return train, test


def write_alerts_jsonl(path: Path, alerts: Iterable[Alert]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for alert in alerts:
            fh.write(json.dumps(alert.to_dict(), sort_keys=True) + "\n")


def write_labels_jsonl(path: Path, groups: Iterable[set[str]]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for group in groups:
            fh.write(json.dumps({"group": sorted(group)}) + "\n")


def write_sop_file(directory: Path, sop: SopDocument) -> Path:
    path = Path(directory) / f"{sop.id}.md"
    text = (
        f"id: {sop.id}\n"
        f"title: {sop.title}\n"
        f"severity: {sop.severity.value}\n"
        "\n"
        f"## Explanation\n{sop.explanation}\n"
        "\n"
        f"## Impact\n{sop.impact}\n"
        "\n"
        f"## Possible Cause\n{sop.possible_cause}\n"
        "\n"
        f"## Mitigation Steps\n{sop.mitigation_steps}\n"
    )
    path.write_text(text, encoding="utf-8")
    return path
