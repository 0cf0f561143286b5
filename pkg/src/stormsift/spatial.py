"""Service-topology embeddings for the spatial correlation metric.

Historical correlated alert pairs define a directed service graph; biased
second-order random walks (node2vec-style transition weights) sample service
sequences, emitting one alert type per visited service, and a from-scratch
skip-gram model with negative sampling embeds the alert types. Pair distance
in that space is the spatial metric fed to fusion.

Walk sampling and training are single-threaded and fully seeded: equal
inputs give bit-identical embeddings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .model import Alert, AlertType, ValidationError


@dataclass(frozen=True)
class TopologyGraph:
    """Directed service graph with per-edge occurrence counts."""

    nodes: frozenset[str]
    edges: dict[tuple[str, str], int]
    alerts_at: dict[str, frozenset[str]]
    tie_warnings: int = 0

    def out_neighbors(self, service: str) -> list[str]:
        return sorted(dst for (src, dst) in self.edges if src == service)

    def to_dict(self) -> dict[str, Any]:
        return {
            "nodes": sorted(self.nodes),
            "edges": [
                {"src": s, "dst": d, "count": c}
                for (s, d), c in sorted(self.edges.items())
            ],
            "alerts_at": {s: sorted(v) for s, v in sorted(self.alerts_at.items())},
            "tie_warnings": self.tie_warnings,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TopologyGraph":
        return cls(
            nodes=frozenset(d["nodes"]),
            edges={(e["src"], e["dst"]): int(e["count"]) for e in d["edges"]},
            alerts_at={s: frozenset(v) for s, v in d["alerts_at"].items()},
            tie_warnings=int(d.get("tie_warnings", 0)),
        )


@dataclass(frozen=True)
class WalkConfig:
    """Biased random-walk parameters.

    ``inout_param`` below 1 is the DFS-like regime, which favours the long
    propagation chains failures follow across services. ``weighted`` makes
    edge occurrence counts scale transition probabilities; it is off by
    default to mirror plain historical-link topologies.
    """

    walks_per_node: int = 20
    walk_length: int = 15
    return_param: float = 1.0
    inout_param: float = 0.5
    rng_seed: int = 0
    weighted: bool = False

    def __post_init__(self) -> None:
        if self.return_param <= 0 or self.inout_param <= 0:
            raise ValidationError("return_param and inout_param must be positive")
        if self.walk_length < 2:
            raise ValidationError("walk_length must be at least 2")
        if self.walks_per_node < 1:
            raise ValidationError("walks_per_node must be at least 1")


@dataclass(frozen=True)
class EmbedConfig:
    """Skip-gram hyperparameters for the alert-type embedding."""

    dimension: int = 64
    context_window: int = 5
    negative_samples: int = 5
    epochs: int = 10
    learning_rate: float = 0.025
    rng_seed: int = 0

    def __post_init__(self) -> None:
        for name in ("dimension", "context_window", "negative_samples", "epochs"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be at least 1")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")


@dataclass
class AlertEmbeddings:
    """Trained vectors per alert type plus the owning-service map for fallback."""

    vectors: dict[str, np.ndarray]
    service_of: dict[str, str]
    epoch_losses: list[float] = field(default_factory=list)

    @property
    def dimension(self) -> int:
        first = next(iter(self.vectors.values()))
        return int(first.shape[0])


@dataclass(frozen=True)
class HistoryPair:
    """One historically correlated alert pair used to build the topology."""

    first: Alert
    second: Alert


def build_topology_graph(history: Iterable[HistoryPair]) -> TopologyGraph:
    """Accumulate directed edges from the earlier alert's service to the later's.

    Equal arrival times fall back to lexicographic alert-id order for the
    direction (counted as a tie warning). Self-loops are kept: a service can
    correlate with itself.
    """
    edges: dict[tuple[str, str], int] = {}
    alerts_at: dict[str, set[str]] = {}
    nodes: set[str] = set()
    ties = 0
    for pair in history:
        a, b = pair.first, pair.second
        if a.arrival_time < b.arrival_time:
            earlier, later = a, b
        elif b.arrival_time < a.arrival_time:
            earlier, later = b, a
        else:
            ties += 1
            earlier, later = (a, b) if a.id <= b.id else (b, a)
        edge = (earlier.service, later.service)
        edges[edge] = edges.get(edge, 0) + 1
        for alert in (a, b):
            nodes.add(alert.service)
            alerts_at.setdefault(alert.service, set()).add(alert.sop_id)
    return TopologyGraph(
        nodes=frozenset(nodes),
        edges=edges,
        alerts_at={s: frozenset(v) for s, v in alerts_at.items()},
        tie_warnings=ties,
    )


def _transition_weight(
    graph: TopologyGraph, prev: str, cur: str, nxt: str, cfg: WalkConfig
) -> float:
    w = float(graph.edges[(cur, nxt)]) if cfg.weighted else 1.0
    if nxt == prev:
        return w / cfg.return_param
    if (prev, nxt) in graph.edges:
        return w
    return w / cfg.inout_param


def sample_walks(graph: TopologyGraph, cfg: WalkConfig) -> list[list[str]]:
    """Sample alert-type sequences via alert-aware biased random walks.

    Walks follow edge direction (it encodes propagation order). Every visited
    service contributes one alert type drawn uniformly from its historical
    alerts; services without alerts are traversed silently and are not used
    as start nodes. A service without outgoing edges ends the walk early.
    """
    if not graph.nodes:
        raise ValidationError("cannot walk an empty graph")
    rng = np.random.default_rng(cfg.rng_seed)
    alerts_sorted = {s: sorted(v) for s, v in graph.alerts_at.items()}
    out = {s: graph.out_neighbors(s) for s in sorted(graph.nodes)}
    starts = [s for s in sorted(graph.nodes) if alerts_sorted.get(s)]

    walks: list[list[str]] = []
    for start in starts:
        for _ in range(cfg.walks_per_node):
            services = [start]
            while len(services) < cfg.walk_length:
                cur = services[-1]
                neighbors = out[cur]
                if not neighbors:
                    break
                if len(services) == 1:
                    if cfg.weighted:
                        weights = np.array(
                            [graph.edges[(cur, n)] for n in neighbors], dtype=float
                        )
                    else:
                        weights = np.ones(len(neighbors))
                else:
                    prev = services[-2]
                    weights = np.array(
                        [_transition_weight(graph, prev, cur, n, cfg) for n in neighbors]
                    )
                probs = weights / weights.sum()
                services.append(neighbors[rng.choice(len(neighbors), p=probs)])
            emitted = []
            for svc in services:
                candidates = alerts_sorted.get(svc)
                if not candidates:
                    continue
                emitted.append(candidates[rng.integers(len(candidates))])
            if emitted:
                walks.append(emitted)
    return walks


def _scalar_sigmoid(x: float) -> float:
    if x > 30.0:
        return 1.0
    if x < -30.0:
        return 0.0
    return 1.0 / (1.0 + math.exp(-x))


def _negative_sampling_table(counts: dict[str, int], keys: list[str]) -> np.ndarray:
    freq = np.array([counts[k] for k in keys], dtype=float) ** 0.75
    return freq / freq.sum()


def skipgram_pairs(encoded: Sequence[Sequence[int]], window: int) -> tuple[np.ndarray, np.ndarray]:
    """Static (center, context) pair list for a fixed sliding window."""
    centers: list[int] = []
    contexts: list[int] = []
    for seq in encoded:
        for pos, center in enumerate(seq):
            lo = max(0, pos - window)
            hi = min(len(seq), pos + window + 1)
            for ctx_pos in range(lo, hi):
                if ctx_pos != pos:
                    centers.append(center)
                    contexts.append(seq[ctx_pos])
    return np.array(centers, dtype=np.int64), np.array(contexts, dtype=np.int64)


def train_skipgram(
    sequences: Sequence[Sequence[str]],
    cfg: EmbedConfig,
    service_of: Mapping[str, str] | None = None,
) -> AlertEmbeddings:
    """Train skip-gram with negative sampling over the walk corpus.

    Negatives for a whole epoch are drawn in one batch from the unigram^0.75
    table. Returns the input-side vectors, quantized to float32 so in-memory
    values match what the vector file round-trips. ``epoch_losses`` records
    the mean per-pair loss of each epoch (a training diagnostic, not
    persisted).
    """
    counts: dict[str, int] = {}
    for seq in sequences:
        for key in seq:
            counts[key] = counts.get(key, 0) + 1
    keys = sorted(counts)
    if len(keys) < 2:
        raise ValidationError("degenerate corpus: need at least 2 distinct keys")
    index = {k: i for i, k in enumerate(keys)}

    rng = np.random.default_rng(cfg.rng_seed)
    dim = cfg.dimension
    vin = (rng.random((len(keys), dim)) - 0.5) / dim
    vout = np.zeros((len(keys), dim))
    cum_noise = np.cumsum(_negative_sampling_table(counts, keys))

    encoded = [[index[k] for k in seq] for seq in sequences if len(seq) >= 2]
    centers, contexts = skipgram_pairs(encoded, cfg.context_window)
    n_pairs = len(centers)
    if n_pairs == 0:
        raise ValidationError("degenerate corpus: no context pairs")

    lr = cfg.learning_rate
    losses: list[float] = []
    for _ in range(cfg.epochs):
        negatives = np.searchsorted(cum_noise, rng.random((n_pairs, cfg.negative_samples)))
        total = 0.0
        for i in range(n_pairs):
            center, context = centers[i], contexts[i]
            v = vin[center]
            s = _scalar_sigmoid(float(vout[context] @ v))
            total -= math.log(max(s, 1e-12))
            g = lr * (s - 1.0)
            grad_v = g * vout[context]
            vout[context] -= g * v
            for neg in negatives[i]:
                if neg == context:
                    continue
                sn = _scalar_sigmoid(float(vout[neg] @ v))
                total -= math.log(max(1.0 - sn, 1e-12))
                gn = lr * sn
                grad_v += gn * vout[neg]
                vout[neg] -= gn * v
            v -= grad_v
        losses.append(total / n_pairs)

    vectors = {k: vin[index[k]].astype(np.float32) for k in keys}
    services = dict(service_of) if service_of else {}
    return AlertEmbeddings(vectors=vectors, service_of=services, epoch_losses=losses)


def embedding_for(emb: AlertEmbeddings, t: AlertType) -> np.ndarray:
    """Vector for a type, with fallbacks for anything the model never saw.

    Unseen type on a known service: mean of that service's trained vectors.
    Unseen service: the global mean vector, which lands mid-range after
    normalization and defers the call to temporal evidence or the LLM.
    """
    vec = emb.vectors.get(t.key)
    if vec is not None:
        return vec
    same_service = [
        emb.vectors[k]
        for k in sorted(emb.vectors)
        if emb.service_of.get(k) == t.service
    ]
    if same_service:
        return np.mean(np.stack(same_service), axis=0).astype(np.float32)
    all_vecs = np.stack([emb.vectors[k] for k in sorted(emb.vectors)])
    return np.mean(all_vecs, axis=0).astype(np.float32)


def spatial_distance(emb: AlertEmbeddings, a: AlertType, b: AlertType) -> float:
    """Euclidean distance between the two types' embeddings."""
    va = embedding_for(emb, a).astype(np.float64)
    vb = embedding_for(emb, b).astype(np.float64)
    return float(np.linalg.norm(va - vb))
