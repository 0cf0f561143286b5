"""End-to-end orchestration: train, calibrate, aggregate, evaluate.

The run configuration is one JSON document with a section per stage; its
fingerprint is echoed into every artifact so stale mixes are detectable.
Stage wall-clock goes into sibling report/timing artifacts, never into
metrics.json, which stays byte-identical across reruns with equal seeds.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import clustering, fusion, temporal
from .ingest import (
    Dataset,
    default_start_time,
    divide_into_windows,
    partition_by_region,
    split_chronologically,
)
from .model import (
    Alert,
    AlertCluster,
    AlertType,
    CorrelationVerdict,
    Decision,
    FusionConfig,
    PairScore,
    SopSummary,
    ValidationError,
    VerdictLabel,
    VerdictSource,
    WindowingConfig,
)
from .reasoner import (
    BackendKind,
    LlmBackendDescriptor,
    MockChatBackend,
    PairQuery,
    ReasoningRuleSet,
    SummaryCache,
    extract_knowledge,
    make_backend,
    reason_pair,
    DEFAULT_RULES,
)
from .simulate import SimConfig
from .spatial import (
    AlertEmbeddings,
    EmbedConfig,
    HistoryPair,
    TopologyGraph,
    WalkConfig,
    build_topology_graph,
    sample_walks,
    spatial_distance,
    train_skipgram,
)
from .textvec import SampleBank, TextEmbedConfig, TextEmbedder, train_text_embedder
from .vecio import MAGIC_ALERT_VECTORS, MAGIC_TEXT_VECTORS, load_vectors, save_vectors

log = logging.getLogger(__name__)


class MissingArtifactError(RuntimeError):
    """An artifact required by this stage has not been produced yet."""

    def __init__(self, what: str, producing_command: str) -> None:
        super().__init__(f"missing {what}; run `stormsift {producing_command}` first")
        self.producing_command = producing_command


@dataclass(frozen=True)
class TemporalSettings:
    jaccard_noise_threshold: float = 0.05
    discard_noise_types: bool = True
    noise_min_occupancy: float = 0.5
    noise_partner_fraction: float = 0.5
    count_empty_windows: bool = False


@dataclass(frozen=True)
class SplitSettings:
    cutoff_fraction: float = 0.6
    cutoff: int | None = None


@dataclass(frozen=True)
class LlmSettings:
    backend: str = "mock"
    endpoint: str | None = None
    model: str | None = None
    max_prompt_chars: int = 8000
    timeout_s: float = 30.0
    max_retries: int = 2
    parallelism: int = 4
    rules: tuple[str, ...] = DEFAULT_RULES

    def descriptor(self) -> LlmBackendDescriptor:
        kind = BackendKind.MOCK if self.backend == "mock" else BackendKind.REMOTE_CHAT
        return LlmBackendDescriptor(
            kind=kind,
            endpoint=self.endpoint,
            model=self.model,
            max_prompt_chars=self.max_prompt_chars,
            timeout_s=self.timeout_s,
            max_retries=self.max_retries,
        )


@dataclass(frozen=True)
class EvalSettings:
    pair_universe: str = "cowindowed"  # or "global"


@dataclass(frozen=True)
class BankSettings:
    max_per_label: int = 150
    rng_seed: int = 13


@dataclass(frozen=True)
class RunConfig:
    """Every knob of one run, serializable as a single JSON document."""

    window_length: int = 600
    slide_fraction: str = "1/2"
    temporal: TemporalSettings = TemporalSettings()
    walk: WalkConfig = WalkConfig(rng_seed=11)
    embed: EmbedConfig = EmbedConfig(rng_seed=12)
    text: TextEmbedConfig = TextEmbedConfig(epochs=5, rng_seed=14)
    alpha: float = 3.5
    split: SplitSettings = SplitSettings()
    llm: LlmSettings = LlmSettings()
    evaluation: EvalSettings = EvalSettings()
    bank: BankSettings = BankSettings()
    sim: SimConfig = SimConfig()

    def to_dict(self) -> dict[str, Any]:
        return {
            "window_length": self.window_length,
            "slide_fraction": self.slide_fraction,
            "temporal": {
                "jaccard_noise_threshold": self.temporal.jaccard_noise_threshold,
                "discard_noise_types": self.temporal.discard_noise_types,
                "noise_min_occupancy": self.temporal.noise_min_occupancy,
                "noise_partner_fraction": self.temporal.noise_partner_fraction,
                "count_empty_windows": self.temporal.count_empty_windows,
            },
            "walk": {
                "walks_per_node": self.walk.walks_per_node,
                "walk_length": self.walk.walk_length,
                "return_param": self.walk.return_param,
                "inout_param": self.walk.inout_param,
                "rng_seed": self.walk.rng_seed,
                "weighted": self.walk.weighted,
            },
            "embed": {
                "dimension": self.embed.dimension,
                "context_window": self.embed.context_window,
                "negative_samples": self.embed.negative_samples,
                "epochs": self.embed.epochs,
                "learning_rate": self.embed.learning_rate,
                "rng_seed": self.embed.rng_seed,
            },
            "text": self.text.to_dict(),
            "alpha": self.alpha,
            "split": {"cutoff_fraction": self.split.cutoff_fraction, "cutoff": self.split.cutoff},
            "llm": {
                "backend": self.llm.backend,
                "endpoint": self.llm.endpoint,
                "model": self.llm.model,
                "max_prompt_chars": self.llm.max_prompt_chars,
                "timeout_s": self.llm.timeout_s,
                "max_retries": self.llm.max_retries,
                "parallelism": self.llm.parallelism,
                "rules": list(self.llm.rules),
            },
            "evaluation": {"pair_universe": self.evaluation.pair_universe},
            "bank": {"max_per_label": self.bank.max_per_label, "rng_seed": self.bank.rng_seed},
            "sim": self.sim.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunConfig":
        base = cls()
        temporal_d = {**base.to_dict()["temporal"], **d.get("temporal", {})}
        walk_d = {**base.to_dict()["walk"], **d.get("walk", {})}
        embed_d = {**base.to_dict()["embed"], **d.get("embed", {})}
        text_d = {**base.text.to_dict(), **d.get("text", {})}
        split_d = {**base.to_dict()["split"], **d.get("split", {})}
        llm_d = {**base.to_dict()["llm"], **d.get("llm", {})}
        eval_d = {**base.to_dict()["evaluation"], **d.get("evaluation", {})}
        bank_d = {**base.to_dict()["bank"], **d.get("bank", {})}
        return cls(
            window_length=int(d.get("window_length", base.window_length)),
            slide_fraction=str(d.get("slide_fraction", base.slide_fraction)),
            temporal=TemporalSettings(**temporal_d),
            walk=WalkConfig(**walk_d),
            embed=EmbedConfig(**embed_d),
            text=TextEmbedConfig.from_dict(text_d),
            alpha=float(d.get("alpha", base.alpha)),
            split=SplitSettings(**split_d),
            llm=LlmSettings(**{**llm_d, "rules": tuple(llm_d["rules"])}),
            evaluation=EvalSettings(**eval_d),
            bank=BankSettings(**bank_d),
            sim=SimConfig.from_dict(d.get("sim", {})),
        )

    def fingerprint(self) -> str:
        """Hash of everything that can change results.

        Runtime-only knobs (parallelism, timeouts, retries) are excluded:
        they never alter artifacts, so they must not mark them stale.
        """
        payload = self.to_dict()
        for volatile in ("parallelism", "timeout_s", "max_retries"):
            payload["llm"].pop(volatile, None)
        canonical = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def windowing_for(self, alerts: Sequence[Alert]) -> WindowingConfig:
        from fractions import Fraction

        return WindowingConfig(
            start_time=default_start_time(alerts),
            window_length=self.window_length,
            slide_fraction=Fraction(self.slide_fraction),
        )


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return RunConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class StageTimer:
    """Wall-clock per stage, in whole milliseconds."""

    def __init__(self) -> None:
        self.timings_ms: dict[str, int] = {}

    def time(self, name: str):
        timer = self

        class _Ctx:
            def __enter__(self) -> None:
                self._t0 = time.perf_counter()

            def __exit__(self, *exc: Any) -> None:
                elapsed = int(round((time.perf_counter() - self._t0) * 1000))
                timer.timings_ms[name] = timer.timings_ms.get(name, 0) + elapsed

        return _Ctx()


@dataclass
class ArtifactPaths:
    root: Path

    def __post_init__(self) -> None:
        self.root = Path(self.root)

    @property
    def manifest(self) -> Path:
        return self.root / "manifest.json"

    @property
    def occurrence(self) -> Path:
        return self.root / "occurrence.json"

    @property
    def topology(self) -> Path:
        return self.root / "topology.json"

    @property
    def spatial_vec(self) -> Path:
        return self.root / "spatial.vec"

    @property
    def text_vec(self) -> Path:
        return self.root / "text.vec"

    @property
    def samples(self) -> Path:
        return self.root / "samples.json"

    @property
    def summaries(self) -> Path:
        return self.root / "summaries.json"

    @property
    def calibration(self) -> Path:
        return self.root / "calibration.json"


def _write_json(path: Path, payload: Mapping[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _read_json(path: Path, producing_command: str) -> dict[str, Any]:
    if not path.is_file():
        raise MissingArtifactError(str(path.name), producing_command)
    return json.loads(path.read_text(encoding="utf-8"))


def resolve_cutoff(dataset: Dataset, cfg: RunConfig) -> int:
    if cfg.split.cutoff is not None:
        return cfg.split.cutoff
    arrivals = sorted(a.arrival_time for a in dataset.alerts)
    if not arrivals:
        raise ValidationError("cannot derive a cutoff from an empty dataset")
    idx = min(len(arrivals) - 1, int(len(arrivals) * cfg.split.cutoff_fraction))
    return arrivals[idx]


def windows_by_region(
    dataset_alerts: Sequence[Alert], cfg: RunConfig
) -> tuple[dict[str, list], dict[str, WindowingConfig]]:
    """Per-region sliding windows plus the windowing config used for each."""
    regions = partition_by_region(Dataset(alerts=list(dataset_alerts), sops={}))
    windows: dict[str, list] = {}
    configs: dict[str, WindowingConfig] = {}
    for region, alerts in regions.items():
        wc = cfg.windowing_for(alerts)
        configs[region] = wc
        windows[region] = divide_into_windows(alerts, wc)
    return windows, configs


def pooled_windows(windows: Mapping[str, list]) -> list:
    out = []
    for region in sorted(windows):
        out.extend(windows[region])
    return out


def type_registry(*alert_lists: Sequence[Alert]) -> dict[str, AlertType]:
    registry: dict[str, AlertType] = {}
    for alerts in alert_lists:
        for alert in alerts:
            registry.setdefault(alert.sop_id, AlertType(key=alert.sop_id, service=alert.service))
    return registry


def history_pairs_from_labels(dataset: Dataset) -> list[HistoryPair]:
    by_id = dataset.alert_by_id()
    pairs: list[HistoryPair] = []
    for group in dataset.labels or []:
        members = sorted(group)
        for i, a in enumerate(members):
            for b in members[i + 1 :]:
                if a in by_id and b in by_id:
                    pairs.append(HistoryPair(first=by_id[a], second=by_id[b]))
    return pairs


def cogrouped_type_pairs(dataset: Dataset) -> set[frozenset[str]]:
    by_id = dataset.alert_by_id()
    out: set[frozenset[str]] = set()
    for group in dataset.labels or []:
        keys = sorted({by_id[i].sop_id for i in group if i in by_id})
        for i, a in enumerate(keys):
            for b in keys[i + 1 :]:
                out.add(frozenset((a, b)))
    return out


def candidate_pairs_from_windows(windows: Sequence) -> list[tuple[str, str]]:
    """Unordered type pairs (self-pairs included) sharing at least one window."""
    pairs: set[tuple[str, str]] = set()
    for window in windows:
        members = sorted(window.member_types)
        for i, a in enumerate(members):
            pairs.add((a, a))
            for b in members[i + 1 :]:
                pairs.add((a, b))
    return sorted(pairs)


@dataclass
class TrainedState:
    config: RunConfig
    cutoff: int
    index: temporal.OccurrenceIndex
    topology: TopologyGraph
    embeddings: AlertEmbeddings
    embedder: TextEmbedder
    bank: SampleBank
    cache: SummaryCache
    s_min: float
    s_max: float
    timings_ms: dict[str, int] = field(default_factory=dict)


def _summaries_for(
    dataset: Dataset, keys: Sequence[str], backend, cache: SummaryCache
) -> dict[str, SopSummary]:
    out: dict[str, SopSummary] = {}
    for key in sorted(set(keys)):
        sop = dataset.sops.get(key)
        if sop is not None:
            out[key] = extract_knowledge(backend, sop, cache)
    return out


def train_pipeline(dataset: Dataset, cfg: RunConfig, backend=None) -> TrainedState:
    """Build every model artifact from the training side of the split."""
    if dataset.labels is None:
        raise ValidationError("training requires a labels file (ground-truth groups)")
    backend = backend or make_backend(cfg.llm.descriptor())
    timer = StageTimer()

    cutoff = resolve_cutoff(dataset, cfg)
    train_ds, _ = split_chronologically(dataset, cutoff)

    with timer.time("windowing"):
        train_windows, _ = windows_by_region(train_ds.alerts, cfg)
        windows = pooled_windows(train_windows)
        if not windows:
            raise ValidationError("training split produced no windows")
        total = None
        if cfg.temporal.count_empty_windows:
            # count every window slot up to the last occupied one per region
            total = sum(ws[-1].index + 1 for ws in train_windows.values() if ws)
        index = temporal.build_occurrence_index(windows, total_windows=total)

    with timer.time("topology"):
        topology = build_topology_graph(history_pairs_from_labels(train_ds))

    with timer.time("spatial_embedding"):
        service_of = {
            key: t.service for key, t in type_registry(train_ds.alerts).items()
        }
        walks = sample_walks(topology, cfg.walk) if topology.nodes else []
        embeddings = train_skipgram(walks, cfg.embed, service_of=service_of)

    with timer.time("knowledge_extraction"):
        cache = SummaryCache()
        train_keys = sorted({a.sop_id for a in train_ds.alerts})
        summaries = _summaries_for(dataset, train_keys, backend, cache)

    with timer.time("text_embedding"):
        titles = {sop_id: sop.title for sop_id, sop in dataset.sops.items()}
        corpus = [
            " ".join(
                (
                    titles.get(key, ""),
                    s.explanation_summary,
                    s.impact_summary,
                    s.cause_summary,
                    s.steps_summary,
                )
            )
            for key, s in sorted(summaries.items())
        ]
        embedder = train_text_embedder(corpus, cfg.text)

    with timer.time("sample_bank"):
        bank = _build_sample_bank(train_ds, train_windows, summaries, embedder, titles, cfg)

    with timer.time("normalization"):
        registry = type_registry(train_ds.alerts)
        train_pairs = candidate_pairs_from_windows(windows)
        distances = [
            spatial_distance(embeddings, registry[a], registry[b])
            for a, b in train_pairs
            if a != b and a in registry and b in registry
        ]
        if distances:
            s_min, s_max = fusion.fit_normalization(distances)
        else:
            s_min, s_max = 0.0, 1.0

    return TrainedState(
        config=cfg,
        cutoff=cutoff,
        index=index,
        topology=topology,
        embeddings=embeddings,
        embedder=embedder,
        bank=bank,
        cache=cache,
        s_min=s_min,
        s_max=s_max,
        timings_ms=timer.timings_ms,
    )


def _build_sample_bank(
    train_ds: Dataset,
    train_windows: Mapping[str, list],
    summaries: Mapping[str, SopSummary],
    embedder: TextEmbedder,
    titles: Mapping[str, str],
    cfg: RunConfig,
) -> SampleBank:
    positives = sorted(
        tuple(sorted(p)) for p in cogrouped_type_pairs(train_ds) if len(p) == 2
    )
    cowindowed = {
        (a, b) for a, b in candidate_pairs_from_windows(pooled_windows(train_windows)) if a != b
    }
    negatives = sorted(p for p in cowindowed if frozenset(p) not in {frozenset(x) for x in positives})

    rng = np.random.default_rng(cfg.bank.rng_seed)
    cap = cfg.bank.max_per_label

    def pick(pairs: list[tuple[str, str]]) -> list[tuple[str, str]]:
        usable = [p for p in pairs if p[0] in summaries and p[1] in summaries]
        if len(usable) <= cap:
            return usable
        chosen = rng.choice(len(usable), size=cap, replace=False)
        return [usable[i] for i in sorted(chosen)]

    bank = SampleBank()
    for a, b in pick(positives):
        bank.add(embedder, summaries[a], summaries[b], VerdictLabel.CORRELATED, titles)
    for a, b in pick(negatives):
        bank.add(embedder, summaries[a], summaries[b], VerdictLabel.NOT_CORRELATED, titles)
    return bank


def save_artifacts(state: TrainedState, paths: ArtifactPaths) -> None:
    paths.root.mkdir(parents=True, exist_ok=True)
    fp = state.config.fingerprint()
    _write_json(
        paths.manifest,
        {
            "config_fingerprint": fp,
            "config": state.config.to_dict(),
            "cutoff": state.cutoff,
            "s_min": state.s_min,
            "s_max": state.s_max,
            "service_of": dict(sorted(state.embeddings.service_of.items())),
            "timings_ms": state.timings_ms,
        },
    )
    _write_json(paths.occurrence, {"config_fingerprint": fp, **state.index.to_dict()})
    _write_json(paths.topology, {"config_fingerprint": fp, **state.topology.to_dict()})
    save_vectors(paths.spatial_vec, state.embeddings.vectors, MAGIC_ALERT_VECTORS)
    save_vectors(
        paths.text_vec,
        {str(b): v for b, v in state.embedder.bucket_vectors.items()},
        MAGIC_TEXT_VECTORS,
    )
    _write_json(paths.samples, {"config_fingerprint": fp, **state.bank.to_dict()})
    _write_json(paths.summaries, {"config_fingerprint": fp, **state.cache.to_dict()})


@dataclass
class LoadedArtifacts:
    config_fingerprint: str
    cutoff: int
    s_min: float
    s_max: float
    index: temporal.OccurrenceIndex
    embeddings: AlertEmbeddings
    embedder: TextEmbedder
    bank: SampleBank
    cache: SummaryCache
    alpha: float | None = None


def load_artifacts(paths: ArtifactPaths, cfg: RunConfig, require_calibration: bool = False) -> LoadedArtifacts:
    manifest = _read_json(paths.manifest, "train")
    occurrence = _read_json(paths.occurrence, "train")
    _read_json(paths.topology, "train")
    if not paths.spatial_vec.is_file() or not paths.text_vec.is_file():
        raise MissingArtifactError("embedding vectors", "train")
    samples = _read_json(paths.samples, "train")
    summaries = _read_json(paths.summaries, "train")

    if manifest.get("config_fingerprint") != cfg.fingerprint():
        log.warning(
            "artifact fingerprint %s does not match current config %s",
            manifest.get("config_fingerprint"),
            cfg.fingerprint(),
        )

    vectors = load_vectors(paths.spatial_vec, MAGIC_ALERT_VECTORS)
    embeddings = AlertEmbeddings(vectors=vectors, service_of=dict(manifest["service_of"]))
    text_vectors = load_vectors(paths.text_vec, MAGIC_TEXT_VECTORS)
    embedder = TextEmbedder(
        config=TextEmbedConfig.from_dict(manifest["config"]["text"]),
        bucket_vectors={int(k): v.astype(float) for k, v in text_vectors.items()},
    )

    alpha = None
    s_min, s_max = float(manifest["s_min"]), float(manifest["s_max"])
    if paths.calibration.is_file():
        calibration = json.loads(paths.calibration.read_text(encoding="utf-8"))
        alpha = float(calibration["alpha"])
        s_min = float(calibration.get("s_min", s_min))
        s_max = float(calibration.get("s_max", s_max))
    elif require_calibration:
        raise MissingArtifactError("calibration.json", "calibrate")

    return LoadedArtifacts(
        config_fingerprint=str(manifest["config_fingerprint"]),
        cutoff=int(manifest["cutoff"]),
        s_min=s_min,
        s_max=s_max,
        index=temporal.OccurrenceIndex.from_dict(occurrence),
        embeddings=embeddings,
        embedder=embedder,
        bank=SampleBank.from_dict(samples),
        cache=SummaryCache.from_dict(summaries),
        alpha=alpha,
    )


def calibrate_pipeline(dataset: Dataset, cfg: RunConfig, paths: ArtifactPaths) -> dict[str, Any]:
    """Grid-search alpha on the labeled training pairs and persist the result."""
    artifacts = load_artifacts(paths, cfg)
    train_ds, _ = split_chronologically(dataset, artifacts.cutoff)
    if train_ds.labels is None:
        raise ValidationError("calibration requires labels")

    train_windows, _ = windows_by_region(train_ds.alerts, cfg)
    windows = pooled_windows(train_windows)
    registry = type_registry(train_ds.alerts)
    positives = cogrouped_type_pairs(train_ds)

    noise_types: set[str] = set()
    if cfg.temporal.discard_noise_types:
        noise_types = temporal.noise_alert_types(
            artifacts.index,
            cfg.temporal.jaccard_noise_threshold,
            cfg.temporal.noise_min_occupancy,
            cfg.temporal.noise_partner_fraction,
        )

    pairs: list[tuple[float, float, float]] = []
    labels: list[bool] = []
    for a, b in candidate_pairs_from_windows(windows):
        if a == b or a not in registry or b not in registry:
            continue
        if a in noise_types or b in noise_types:
            continue
        wa, wb = artifacts.index.occurrences(a), artifacts.index.occurrences(b)
        if wa and wb and (wa & wb):
            jac = temporal.jaccard_similarity(artifacts.index, a, b)
            if jac < cfg.temporal.jaccard_noise_threshold:
                continue  # the noise filter removes these before fusion
        t_ab, t_ba = temporal.conditional_probabilities(artifacts.index, a, b)
        s = spatial_distance(artifacts.embeddings, registry[a], registry[b])
        pairs.append((t_ab, t_ba, s))
        labels.append(frozenset((a, b)) in positives)

    alpha = fusion.calibrate_alpha(pairs, labels, artifacts.s_min, artifacts.s_max)
    payload = {
        "config_fingerprint": cfg.fingerprint(),
        "alpha": alpha,
        "s_min": artifacts.s_min,
        "s_max": artifacts.s_max,
        "labeled_pairs": len(pairs),
        "positive_pairs": sum(labels),
    }
    _write_json(paths.calibration, payload)
    return payload


@dataclass
class AggregateFlags:
    no_temporal: bool = False
    no_spatial: bool = False
    no_llm: bool = False

    def tag(self) -> str:
        parts = []
        if self.no_temporal:
            parts.append("no-temporal")
        if self.no_spatial:
            parts.append("no-spatial")
        if self.no_llm:
            parts.append("no-llm")
        return "+".join(parts) if parts else "full"


@dataclass
class AggregateResult:
    clusters: list[AlertCluster]
    verdicts: list[CorrelationVerdict]
    pair_scores: list[PairScore]
    counters: dict[str, int]
    discarded_types: list[str]
    timings_ms: dict[str, int]
    flags: AggregateFlags


def aggregate_pipeline(
    dataset: Dataset,
    cfg: RunConfig,
    paths: ArtifactPaths,
    flags: AggregateFlags | None = None,
    backend=None,
) -> AggregateResult:
    """Score every co-windowed test pair, reason about the uncertain rest,
    and merge the verdicts into per-region clusters."""
    flags = flags or AggregateFlags()
    artifacts = load_artifacts(paths, cfg, require_calibration=True)
    backend = backend or make_backend(cfg.llm.descriptor())
    timer = StageTimer()

    _, test_ds = split_chronologically(dataset, artifacts.cutoff)
    registry = type_registry(test_ds.alerts, dataset.alerts)
    titles = {sop_id: sop.title for sop_id, sop in dataset.sops.items()}

    fusion_cfg = FusionConfig(
        alpha=artifacts.alpha if artifacts.alpha is not None else cfg.alpha,
        s_min=artifacts.s_min,
        s_max=artifacts.s_max,
        jaccard_noise_threshold=cfg.temporal.jaccard_noise_threshold,
    )

    with timer.time("noise_detection"):
        discarded: set[str] = set()
        if cfg.temporal.discard_noise_types and not flags.no_temporal:
            discarded = temporal.noise_alert_types(
                artifacts.index,
                cfg.temporal.jaccard_noise_threshold,
                cfg.temporal.noise_min_occupancy,
                cfg.temporal.noise_partner_fraction,
            )

    with timer.time("windowing"):
        test_windows, window_cfgs = windows_by_region(test_ds.alerts, cfg)
        candidates = candidate_pairs_from_windows(pooled_windows(test_windows))

    pair_scores: list[PairScore] = []
    verdicts: dict[tuple[str, str], CorrelationVerdict] = {}
    uncertain: list[tuple[str, str]] = []
    counters = {
        "scored_pairs": 0,
        "noise_pairs": 0,
        "statistical_correlated_pairs": 0,
        "uncertain_pairs": 0,
        "llm_queried_pairs": 0,
        "llm_correlated_pairs": 0,
        "llm_not_correlated_pairs": 0,
        "llm_unparseable_pairs": 0,
    }

    with timer.time("pair_scoring"):
        for a, b in candidates:
            type_a, type_b = registry[a], registry[b]
            if flags.no_temporal:
                t_ab = t_ba = 0.0
                jac = 0.0
            else:
                t_ab, t_ba = temporal.conditional_probabilities(artifacts.index, a, b)
                jac = temporal.jaccard_similarity(artifacts.index, a, b)
            s = spatial_distance(artifacts.embeddings, type_a, type_b)

            if flags.no_spatial:
                score = max(t_ab, t_ba)
            else:
                score = fusion.similarity_score(t_ab, t_ba, s, fusion_cfg)

            noise = False
            if not flags.no_temporal:
                wa, wb = artifacts.index.occurrences(a), artifacts.index.occurrences(b)
                if wa and wb and (wa & wb):
                    noise = temporal.classify_noise(
                        artifacts.index, a, b, fusion_cfg.jaccard_noise_threshold
                    )
                if a in discarded or b in discarded:
                    noise = True

            decision = fusion.classify_pair(score, noise)
            pair_scores.append(
                PairScore(
                    a=type_a,
                    b=type_b,
                    t_ab=t_ab,
                    t_ba=t_ba,
                    jaccard=jac,
                    spatial_distance=s,
                    similarity_score=score,
                    decision=decision,
                )
            )
            counters["scored_pairs"] += 1
            if decision is Decision.NOISE:
                counters["noise_pairs"] += 1
                verdicts[(a, b)] = CorrelationVerdict(
                    pair=(type_a, type_b),
                    label=VerdictLabel.NOT_CORRELATED,
                    source=VerdictSource.NOISE_FILTER,
                )
            elif decision is Decision.CORRELATED:
                counters["statistical_correlated_pairs"] += 1
                verdicts[(a, b)] = CorrelationVerdict(
                    pair=(type_a, type_b),
                    label=VerdictLabel.CORRELATED,
                    source=VerdictSource.STATISTICAL,
                )
            else:
                counters["uncertain_pairs"] += 1
                uncertain.append((a, b))

    with timer.time("llm_reasoning"):
        if flags.no_llm:
            for a, b in uncertain:
                verdicts[(a, b)] = CorrelationVerdict(
                    pair=(registry[a], registry[b]),
                    label=VerdictLabel.NOT_CORRELATED,
                    source=VerdictSource.STATISTICAL,
                )
        elif uncertain:
            rules = ReasoningRuleSet(rules=cfg.llm.rules)
            summaries = _summaries_for(
                dataset,
                sorted({k for pair in uncertain for k in pair}),
                backend,
                artifacts.cache,
            )

            def run_one(pair: tuple[str, str]) -> CorrelationVerdict:
                a, b = pair
                query = PairQuery(
                    a=registry[a],
                    b=registry[b],
                    title_a=titles.get(a, a),
                    title_b=titles.get(b, b),
                    summary_a=summaries[a],
                    summary_b=summaries[b],
                )
                return reason_pair(
                    backend, query, artifacts.embedder, artifacts.bank, rules, titles
                )

            workers = max(1, cfg.llm.parallelism)
            if workers == 1:
                results = [run_one(p) for p in uncertain]
            else:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    results = list(pool.map(run_one, uncertain))
            for pair, verdict in zip(uncertain, results):
                verdicts[pair] = verdict
                counters["llm_queried_pairs"] += 1
                if verdict.explanation == "llm-unparseable":
                    counters["llm_unparseable_pairs"] += 1
                if verdict.label is VerdictLabel.CORRELATED:
                    counters["llm_correlated_pairs"] += 1
                else:
                    counters["llm_not_correlated_pairs"] += 1

    with timer.time("merging"):
        clusters: list[AlertCluster] = []
        verdict_list = [verdicts[p] for p in sorted(verdicts)]
        regions = partition_by_region(Dataset(alerts=test_ds.alerts, sops={}))
        kept_total = 0
        for region in sorted(regions):
            kept = [a for a in regions[region] if a.sop_id not in discarded]
            kept_total += len(kept)
            if not kept:
                continue
            clusters.extend(
                clustering.merge_verdicts(kept, verdict_list, window_cfgs[region])
            )

    counters["discarded_noise_types"] = len(discarded)
    counters["discarded_instances"] = len(test_ds.alerts) - kept_total
    counters["clusters"] = len(clusters)
    counters["clustered_alerts"] = kept_total

    return AggregateResult(
        clusters=sorted(clusters, key=lambda c: (c.region, min(c.members))),
        verdicts=verdict_list,
        pair_scores=pair_scores,
        counters=counters,
        discarded_types=sorted(discarded),
        timings_ms=timer.timings_ms,
        flags=flags,
    )


def save_aggregate(result: AggregateResult, out_dir: str | Path, cfg: RunConfig, dataset: Dataset) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    by_id = dataset.alert_by_id()

    with (out / "clusters.jsonl").open("w", encoding="utf-8") as fh:
        for cluster in result.clusters:
            links = clustering.cluster_links(cluster, by_id, result.verdicts)
            fh.write(
                json.dumps(
                    {
                        "region": cluster.region,
                        "members": sorted(cluster.members),
                        "links": links,
                    },
                    sort_keys=True,
                )
                + "\n"
            )

    with (out / "verdicts.jsonl").open("w", encoding="utf-8") as fh:
        verdict_by_pair = {
            tuple(sorted((v.pair[0].key, v.pair[1].key))): v for v in result.verdicts
        }
        for score in sorted(result.pair_scores, key=lambda p: (p.a.key, p.b.key)):
            pair = tuple(sorted((score.a.key, score.b.key)))
            verdict = verdict_by_pair[pair]
            fh.write(
                json.dumps(
                    {
                        **score.to_dict(),
                        "label": verdict.label.value,
                        "source": verdict.source.value,
                        "explanation": verdict.explanation,
                    },
                    sort_keys=True,
                )
                + "\n"
            )

    _write_json(
        out / "report.json",
        {
            "config_fingerprint": cfg.fingerprint(),
            "flags": result.flags.tag(),
            "counters": result.counters,
            "discarded_noise_types": result.discarded_types,
            "timings_ms": result.timings_ms,
        },
    )


def evaluate_pipeline(
    dataset: Dataset,
    cfg: RunConfig,
    paths: ArtifactPaths,
    run_dir: str | Path,
    pair_universe_mode: str | None = None,
) -> dict[str, Any]:
    """Score a cluster report against the test-side truth groups.

    Writes ``metrics.json`` (deterministic) and ``timings.json`` (wall-clock)
    into the run directory and returns the metrics payload.
    """
    run = Path(run_dir)
    clusters_path = run / "clusters.jsonl"
    if not clusters_path.is_file():
        raise MissingArtifactError("clusters.jsonl", "aggregate")
    report = _read_json(run / "report.json", "aggregate")
    manifest = _read_json(paths.manifest, "train")
    timer = StageTimer()

    mode = pair_universe_mode or cfg.evaluation.pair_universe
    with timer.time("evaluation"):
        _, test_ds = split_chronologically(dataset, int(manifest["cutoff"]))
        truth = [set(g) for g in (test_ds.labels or [])]

        predicted: list[set[str]] = []
        with clusters_path.open(encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    predicted.append(set(json.loads(line)["members"]))

        predicted_ids = {i for group in predicted for i in group}
        truth_ids = {i for group in truth for i in group}
        universe = predicted_ids | truth_ids

        pair_universe = None
        if mode == "cowindowed":
            # Window configs must match the ones aggregate used, so derive
            # them from the full per-region test stream, then restrict the
            # pair universe to in-scope alerts.
            pair_universe = set()
            regions = partition_by_region(Dataset(alerts=test_ds.alerts, sops={}))
            for region_alerts in regions.values():
                wc = cfg.windowing_for(region_alerts)
                in_scope = [a for a in region_alerts if a.id in universe]
                pair_universe |= clustering.cowindowed_pair_universe(in_scope, wc)

        metrics = clustering.evaluate(predicted, truth, universe, pair_universe)

    payload = {
        "config_fingerprint": cfg.fingerprint(),
        "flags": report.get("flags", "full"),
        "pair_universe": mode,
        "tp": metrics.tp,
        "fp": metrics.fp,
        "fn": metrics.fn,
        "tn": metrics.tn,
        "precision": round(metrics.precision, 6),
        "recall": round(metrics.recall, 6),
        "f1": round(metrics.f1, 6),
        "counters": report["counters"],
    }
    _write_json(run / "metrics.json", payload)
    _write_json(
        run / "timings.json",
        {"aggregate_ms": report.get("timings_ms", {}), "evaluate_ms": timer.timings_ms},
    )
    return payload
