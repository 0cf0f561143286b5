"""Synthetic alert storms with ground truth, causally structured SOPs, and
periodic heartbeat noise.

The generator's keyword construction is the contract the mock reasoning
backend decides against: a type's impact text carries its own service's
symptom and fault tokens, and its possible-cause text carries the service's
fault tokens plus the symptom tokens of upstream services. Adjacent services
in the propagation DAG therefore overlap above the mock threshold while
unrelated services never do. A configurable share of services gets "vague"
SOPs (generic cause text) so some true links are only recoverable
statistically, and a share of storms emits one-off rare alert types that
only the reasoning stage can recover.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from .ingest import Dataset
from .model import Alert, Severity, SopDocument, ValidationError

SYMPTOM_THEMES = ("latency", "timeout", "iowait", "backlog")
FAULT_THEMES = ("diskfault", "memleak")
VAGUE_CAUSE = (
    "Root analysis pending_vendor_review with unclassified_fault_signature, "
    "manual_triage_required for this case."
)
TITLE_TEMPLATES = (
    "Request latency above threshold on {svc}",
    "Process health check failing on {svc}",
    "Error budget burn detected on {svc}",
)


@dataclass(frozen=True)
class SimConfig:
    """Knobs for world generation and storm simulation."""

    services: int = 50
    edge_density: float = 0.06
    regions: int = 2
    storms: int = 40
    propagation_probability: float = 0.9
    propagation_delay: tuple[int, int] = (20, 90)
    alerts_per_affected_service: tuple[int, int] = (2, 4)
    noise_types: int = 3
    noise_period: int = 300
    duration: int | None = None
    rng_seed: int = 7
    rare_storm_fraction: float = 0.2
    vague_service_fraction: float = 0.3
    concurrent_storm_fraction: float = 0.15
    types_per_service: tuple[int, int] = (1, 3)
    inter_storm_gap: tuple[int, int] = (1800, 2400)
    window_length: int = 600
    base_time: int = 1_700_000_000

    def __post_init__(self) -> None:
        for name in (
            "edge_density",
            "propagation_probability",
            "rare_storm_fraction",
            "vague_service_fraction",
            "concurrent_storm_fraction",
        ):
            if not (0.0 <= getattr(self, name) <= 1.0):
                raise ValidationError(f"{name} must be in [0, 1]")
        for name in ("services", "regions", "storms", "noise_period", "window_length"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be at least 1")
        if self.noise_types < 0:
            raise ValidationError("noise_types must be non-negative")
        for name in ("propagation_delay", "alerts_per_affected_service", "types_per_service", "inter_storm_gap"):
            lo, hi = getattr(self, name)
            if lo <= 0 or hi < lo:
                raise ValidationError(f"{name} bounds must be positive and ordered")
        if self.inter_storm_gap[0] < 3 * self.window_length:
            raise ValidationError("inter-storm gap must be at least 3 window lengths")

    def to_dict(self) -> dict[str, Any]:
        return {
            "services": self.services,
            "edge_density": self.edge_density,
            "regions": self.regions,
            "storms": self.storms,
            "propagation_probability": self.propagation_probability,
            "propagation_delay": list(self.propagation_delay),
            "alerts_per_affected_service": list(self.alerts_per_affected_service),
            "noise_types": self.noise_types,
            "noise_period": self.noise_period,
            "duration": self.duration,
            "rng_seed": self.rng_seed,
            "rare_storm_fraction": self.rare_storm_fraction,
            "vague_service_fraction": self.vague_service_fraction,
            "concurrent_storm_fraction": self.concurrent_storm_fraction,
            "types_per_service": list(self.types_per_service),
            "inter_storm_gap": list(self.inter_storm_gap),
            "window_length": self.window_length,
            "base_time": self.base_time,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SimConfig":
        kwargs: dict[str, Any] = {}
        for name, default in cls().to_dict().items():
            if name not in d:
                continue
            value = d[name]
            if isinstance(default, list):
                value = tuple(value)
            kwargs[name] = value
        return cls(**kwargs)


@dataclass
class World:
    """Service DAG plus the alert-type and SOP catalogs generated over it."""

    services: list[str]
    edges: set[tuple[str, str]]
    types_by_service: dict[str, list[str]]
    sops: dict[str, SopDocument]
    symptoms: dict[str, list[str]]
    faults: dict[str, list[str]]
    vague_services: set[str]

    def parents_of(self, service: str) -> list[str]:
        return sorted(src for (src, dst) in self.edges if dst == service)


def _service_name(i: int) -> str:
    return f"svc{i:02d}"


def _make_sop(
    world_like: World, sop_id: str, service: str, title: str, vague: bool
) -> SopDocument:
    symptoms = world_like.symptoms[service]
    faults = world_like.faults[service]
    impact = (
        "Observed effects include "
        + " ".join(symptoms)
        + " with "
        + " ".join(faults)
        + " indicators."
    )
    if vague:
        cause = VAGUE_CAUSE
    else:
        upstream = [t for p in world_like.parents_of(service) for t in world_like.symptoms[p]]
        cause = "Possible causes include " + " ".join(faults)
        if upstream:
            cause += " and upstream " + " ".join(upstream)
        cause += "."
    return SopDocument(
        id=sop_id,
        title=title,
        severity=Severity.MAJOR,
        explanation=(
            f"The monitor for {service} raises this alert when its health "
            "probes breach the configured thresholds for several consecutive "
            "intervals."
        ),
        impact=impact,
        possible_cause=cause,
        mitigation_steps=(
            f"Check the {service} dashboards, confirm whether upstream "
            "dependencies are degraded, and follow the failover runbook if "
            "the condition persists."
        ),
    )


def generate_world(cfg: SimConfig) -> World:
    """Random service DAG with per-service alert types and causal SOPs."""
    rng = np.random.default_rng(cfg.rng_seed)
    services = [_service_name(i) for i in range(cfg.services)]

    edges: set[tuple[str, str]] = set()
    for i in range(cfg.services):
        for j in range(i + 1, cfg.services):
            if rng.random() < cfg.edge_density:
                edges.add((services[i], services[j]))

    symptoms = {
        svc: [f"{svc}_{theme}" for theme in SYMPTOM_THEMES] for svc in services
    }
    faults = {svc: [f"{svc}_{theme}" for theme in FAULT_THEMES] for svc in services}

    vague_services = {
        svc for svc in services if rng.random() < cfg.vague_service_fraction
    }

    world = World(
        services=services,
        edges=edges,
        types_by_service={},
        sops={},
        symptoms=symptoms,
        faults=faults,
        vague_services=vague_services,
    )

    lo, hi = cfg.types_per_service
    for idx, svc in enumerate(services):
        count = int(rng.integers(lo, hi + 1))
        keys = []
        for t in range(count):
            sop_id = f"SOP-{svc}-{t}"
            title = TITLE_TEMPLATES[(idx + t) % len(TITLE_TEMPLATES)].format(svc=svc)
            world.sops[sop_id] = _make_sop(world, sop_id, svc, title, svc in vague_services)
            keys.append(sop_id)
        world.types_by_service[svc] = keys
    return world


def _spread_indices(count: int, fraction: float) -> set[int]:
    if fraction <= 0:
        return set()
    stride = max(1, round(1.0 / fraction))
    return {i for i in range(count) if i % stride == stride // 2}


def rare_storm_indices(cfg: SimConfig) -> set[int]:
    """Deterministic, evenly spread storm indices that use one-off alert types."""
    return _spread_indices(cfg.storms, cfg.rare_storm_fraction)


def concurrent_storm_indices(cfg: SimConfig) -> set[int]:
    """Storms that start alongside their predecessor instead of after the gap.

    These double-root events create frequent-but-unrelated co-occurrence,
    the regime the spatial distance term and the Jaccard filter exist for.
    Index 0 can never be concurrent.
    """
    return {i for i in _spread_indices(cfg.storms, cfg.concurrent_storm_fraction) if i > 0}


@dataclass
class StormResult:
    alerts: list[Alert]
    groups: list[set[str]]
    storm_starts: list[int]


def simulate_storms(world: World, cfg: SimConfig) -> StormResult:
    """Cascade failures through the DAG; every storm is one truth group.

    Rare storms emit fresh alert types (never vague, registered into the SOP
    catalog on the fly) so the statistical stage has nothing on them. Storm
    starts are spaced by at least three window lengths, keeping distinct
    storms out of each other's windows.
    """
    rng = np.random.default_rng(cfg.rng_seed + 1)
    rare = rare_storm_indices(cfg)
    concurrent = concurrent_storm_indices(cfg)
    delay_lo, delay_hi = cfg.propagation_delay
    inst_lo, inst_hi = cfg.alerts_per_affected_service
    gap_lo, gap_hi = cfg.inter_storm_gap

    reach_count = _reachable_counts(world)
    alerts: list[Alert] = []
    groups: list[set[str]] = []
    starts: list[int] = []
    start = cfg.base_time
    region = "region-0"
    for storm in range(cfg.storms):
        if storm in concurrent and starts:
            # Double-root event: an unrelated failure in the same region and
            # the same windows as the previous storm.
            start = starts[-1] + int(rng.integers(0, cfg.window_length // 2))
        else:
            start = max(start, starts[-1] if starts else start) + int(
                rng.integers(gap_lo, gap_hi + 1)
            )
            region = f"region-{storm % cfg.regions}"
        starts.append(start)
        if storm in rare:
            # Rare alerts accompany the more severe problems: bias these
            # storms toward roots with wide downstream reach.
            candidates = [
                world.services[int(rng.integers(len(world.services)))] for _ in range(5)
            ]
            root = max(candidates, key=lambda s: (reach_count[s], s))
        else:
            root = world.services[int(rng.integers(len(world.services)))]

        reached: dict[str, int] = {root: 0}
        frontier = [root]
        while frontier:
            nxt: list[str] = []
            for svc in frontier:
                for dst in sorted(d for (s, d) in world.edges if s == svc):
                    if dst in reached:
                        continue
                    if rng.random() < cfg.propagation_probability:
                        reached[dst] = reached[svc] + int(rng.integers(delay_lo, delay_hi + 1))
                        nxt.append(dst)
            frontier = nxt

        group: set[str] = set()
        for svc in sorted(reached):
            if storm in rare:
                sop_id = f"SOP-{svc}-R{storm}"
                if sop_id not in world.sops:
                    world.sops[sop_id] = _make_sop(
                        world,
                        sop_id,
                        svc,
                        f"Unusual condition {storm} reported on {svc}",
                        vague=False,
                    )
                type_keys = [sop_id]
            else:
                type_keys = world.types_by_service[svc]
            count = int(rng.integers(inst_lo, inst_hi + 1))
            for j in range(count):
                arrival = start + reached[svc] + int(rng.integers(0, 60))
                alert_id = f"S{storm:04d}-{svc}-{j}"
                alerts.append(
                    Alert(
                        id=alert_id,
                        title=world.sops[type_keys[j % len(type_keys)]].title,
                        creation_time=arrival - int(rng.integers(0, 5)),
                        arrival_time=arrival,
                        service=svc,
                        region=region,
                        sop_id=type_keys[j % len(type_keys)],
                    )
                )
                group.add(alert_id)
        groups.append(group)

    _validate_compactness(alerts, groups, cfg)
    return StormResult(alerts=alerts, groups=groups, storm_starts=starts)


def _reachable_counts(world: World) -> dict[str, int]:
    out: dict[str, list[str]] = {s: [] for s in world.services}
    for src, dst in world.edges:
        out[src].append(dst)
    counts = {}
    for svc in world.services:
        seen = {svc}
        stack = [svc]
        while stack:
            for nxt in out[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        counts[svc] = len(seen)
    return counts


def _validate_compactness(alerts: list[Alert], groups: list[set[str]], cfg: SimConfig) -> None:
    arrival = {a.id: a.arrival_time for a in alerts}
    limit = 2 * cfg.window_length
    for group in groups:
        times = [arrival[i] for i in group]
        if times and max(times) - min(times) >= limit:
            raise ValidationError(
                "simulated group spans "
                f"{max(times) - min(times)}s, breaking the {limit}s compactness "
                "bound; reduce propagation delays or alerts per service"
            )


def inject_noise(alerts: list[Alert], world: World, cfg: SimConfig, duration: int) -> list[Alert]:
    """Append heartbeat alert types firing every period in every region.

    Heartbeats belong to no truth group; their SOPs share no causal keywords
    with anything, including each other.
    """
    if cfg.noise_types == 0:
        return alerts
    out = list(alerts)
    for k in range(cfg.noise_types):
        sop_id = f"SOP-HB-{k}"
        service = f"monitor{k}"
        if sop_id not in world.sops:
            world.sops[sop_id] = SopDocument(
                id=sop_id,
                title=f"Scheduled heartbeat report {k}",
                severity=Severity.WARNING,
                explanation="Periodic self-test emitted while the pipeline is healthy.",
                impact="No customer facing degradation is expected from this reminder.",
                possible_cause=f"Regular heartbeat_cycle_{k} timer firing on schedule.",
                mitigation_steps="None required; verify the emitter if the cadence drifts.",
            )
        for region_idx in range(cfg.regions):
            region = f"region-{region_idx}"
            for j, t in enumerate(range(cfg.base_time, cfg.base_time + duration, cfg.noise_period)):
                out.append(
                    Alert(
                        id=f"HB{k}-{region}-{j}",
                        title=world.sops[sop_id].title,
                        creation_time=t,
                        arrival_time=t,
                        service=service,
                        region=region,
                        sop_id=sop_id,
                    )
                )
    return out


def simulate_dataset(cfg: SimConfig) -> Dataset:
    """Full deterministic generation: world, storms, noise, truth groups."""
    world = generate_world(cfg)
    result = simulate_storms(world, cfg)
    if cfg.duration is not None:
        duration = cfg.duration
        last = max(a.arrival_time for a in result.alerts) if result.alerts else cfg.base_time
        if cfg.base_time + duration < last:
            raise ValidationError("configured duration does not cover the simulated storms")
    else:
        last = max(a.arrival_time for a in result.alerts) if result.alerts else cfg.base_time
        duration = (last - cfg.base_time) + 4 * cfg.window_length
    alerts = inject_noise(result.alerts, world, cfg, duration)
    alerts.sort(key=lambda a: (a.arrival_time, a.id))
    return Dataset(alerts=alerts, sops=dict(world.sops), labels=[set(g) for g in result.groups])
