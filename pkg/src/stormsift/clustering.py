"""Merging pair verdicts into clusters and scoring them against truth groups.

Clusters are connected components of a union-find over alert instances: two
instances merge only when their types were judged correlated AND the two
instances actually share at least one time window. Evaluation expands both
predicted and truth clusters into ordered pairs (a size-m cluster yields
m^2 - m of them) and computes precision/recall/F1 over the pair sets.
"""

from __future__ import annotations

from typing import Iterable, Mapping, Sequence

from .ingest import materialized_window_indices
from .model import (
    Alert,
    AlertCluster,
    CorrelationVerdict,
    Metrics,
    VerdictLabel,
    WindowingConfig,
    alert_type_of,
)


class UnionFind:
    """Union by size with path compression over hashable items."""

    def __init__(self, items: Iterable[str]) -> None:
        self._parent = {item: item for item in items}
        self._size = {item: 1 for item in self._parent}

    def find(self, item: str) -> str:
        root = item
        while self._parent[root] != root:
            root = self._parent[root]
        while self._parent[item] != root:
            self._parent[item], item = root, self._parent[item]
        return root

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self._size[ra] < self._size[rb]:
            ra, rb = rb, ra
        self._parent[rb] = ra
        self._size[ra] += self._size[rb]

    def components(self) -> list[set[str]]:
        groups: dict[str, set[str]] = {}
        for item in self._parent:
            groups.setdefault(self.find(item), set()).add(item)
        return [groups[root] for root in sorted(groups)]


def correlated_pair_keys(verdicts: Iterable[CorrelationVerdict]) -> set[frozenset[str]]:
    return {
        frozenset((v.pair[0].key, v.pair[1].key))
        for v in verdicts
        if v.label is VerdictLabel.CORRELATED
    }


def merge_verdicts(
    alerts: Sequence[Alert],
    verdicts: Iterable[CorrelationVerdict],
    cfg: WindowingConfig,
) -> list[AlertCluster]:
    """Cluster alert instances under the correlated verdicts.

    The instance-level window guard stops type-level correlation from merging
    instances that fired hours apart: only co-windowed instances union.
    Singletons are kept, so the result partitions the input.
    """
    correlated = correlated_pair_keys(verdicts)
    uf = UnionFind(a.id for a in alerts)
    region = alerts[0].region if alerts else ""

    by_window: dict[int, list[Alert]] = {}
    for alert in alerts:
        if alert.region != region:
            raise ValueError("merge_verdicts expects alerts from a single region")
        for k in materialized_window_indices(alert.arrival_time, cfg):
            by_window.setdefault(k, []).append(alert)

    for k in sorted(by_window):
        members = by_window[k]
        for i, first in enumerate(members):
            key_a = alert_type_of(first).key
            for second in members[i + 1 :]:
                key_b = alert_type_of(second).key
                pair = (
                    frozenset((key_a,)) if key_a == key_b else frozenset((key_a, key_b))
                )
                if pair in correlated:
                    uf.union(first.id, second.id)

    return [
        AlertCluster(members=frozenset(component), region=region)
        for component in uf.components()
    ]


def clusters_to_pairs(members: Iterable[str]) -> set[tuple[str, str]]:
    """All ordered pairs within one cluster: exactly ``m^2 - m`` of them."""
    items = sorted(set(members))
    return {(p, q) for p in items for q in items if p != q}


def expand_clusters(groups: Iterable[Iterable[str]]) -> set[tuple[str, str]]:
    pairs: set[tuple[str, str]] = set()
    for group in groups:
        pairs |= clusters_to_pairs(group)
    return pairs


def evaluate(
    predicted: Sequence[Iterable[str]],
    truth: Sequence[Iterable[str]],
    universe: set[str] | None = None,
    pair_universe: set[tuple[str, str]] | None = None,
) -> Metrics:
    """Pairwise confusion metrics between predicted and truth groupings.

    ``universe`` defaults to every id seen on either side; ids outside an
    explicit universe are an error. With ``pair_universe`` set (e.g. only
    pairs that share a window), pairs outside it are ignored entirely;
    otherwise all ordered pairs over the universe count, and true negatives
    are whatever remains.
    """
    predicted_ids = {i for group in predicted for i in group}
    truth_ids = {i for group in truth for i in group}
    if universe is None:
        universe = predicted_ids | truth_ids
    else:
        unknown = sorted((predicted_ids | truth_ids) - universe)
        if unknown:
            raise ValueError(f"ids outside the evaluation universe: {unknown}")

    predicted_pairs = expand_clusters(predicted)
    truth_pairs = expand_clusters(truth)
    if pair_universe is not None:
        predicted_pairs &= pair_universe
        truth_pairs &= pair_universe
        total = len(pair_universe)
    else:
        n = len(universe)
        total = n * n - n

    tp = len(predicted_pairs & truth_pairs)
    fp = len(predicted_pairs - truth_pairs)
    fn = len(truth_pairs - predicted_pairs)
    tn = total - tp - fp - fn
    return Metrics(tp=tp, fp=fp, fn=fn, tn=max(tn, 0))


def cowindowed_pair_universe(
    alerts: Sequence[Alert], cfg: WindowingConfig
) -> set[tuple[str, str]]:
    """All ordered instance pairs sharing at least one materialized window."""
    by_window: dict[int, list[str]] = {}
    for alert in alerts:
        for k in materialized_window_indices(alert.arrival_time, cfg):
            by_window.setdefault(k, []).append(alert.id)
    pairs: set[tuple[str, str]] = set()
    for ids in by_window.values():
        for i, p in enumerate(ids):
            for q in ids[i + 1 :]:
                if p != q:
                    pairs.add((p, q))
                    pairs.add((q, p))
    return pairs


def cluster_links(
    cluster: AlertCluster,
    alerts_by_id: Mapping[str, Alert],
    verdicts: Iterable[CorrelationVerdict],
) -> list[dict[str, str]]:
    """Type-pair evidence lines for a cluster report entry."""
    member_keys = {
        alert_type_of(alerts_by_id[i]).key for i in cluster.members if i in alerts_by_id
    }
    links = []
    for v in verdicts:
        if v.label is not VerdictLabel.CORRELATED:
            continue
        a, b = v.pair[0].key, v.pair[1].key
        if a in member_keys and b in member_keys:
            links.append(
                {"a": a, "b": b, "source": v.source.value, "explanation": v.explanation}
            )
    links.sort(key=lambda d: (d["a"], d["b"]))
    return links
