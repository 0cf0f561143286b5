"""Lightweight subword text embedder powering ICL sample retrieval.

A word's vector is the sum of its hashed character n-gram vectors (3..6
grams over the ``<word>`` form, FNV-1a into a fixed bucket space), trained
with skip-gram negative sampling against per-word output vectors. Document
vectors are the mean over word vectors, so out-of-vocabulary words still
embed through their n-grams. Bucket storage is sparse: untouched buckets
keep their deterministic per-bucket initialization, exactly as if the full
bucket matrix had been preallocated.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


def _scalar_sigmoid(x: float) -> float:
    if x > 30.0:
        return 1.0
    if x < -30.0:
        return 0.0
    return 1.0 / (1.0 + math.exp(-x))

from .model import SopSummary, ValidationError, VerdictLabel

_TOKEN_RE = re.compile(r"[a-z0-9_]+")

FNV_OFFSET = 0x811C9DC5
FNV_PRIME = 0x01000193


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def fnv1a(data: str) -> int:
    h = FNV_OFFSET
    for byte in data.encode("utf-8"):
        h = ((h ^ byte) * FNV_PRIME) & 0xFFFFFFFF
    return h


def char_ngrams(word: str, n_min: int, n_max: int) -> list[str]:
    wrapped = f"<{word}>"
    grams = []
    for n in range(n_min, n_max + 1):
        for i in range(len(wrapped) - n + 1):
            grams.append(wrapped[i : i + n])
    return grams


@dataclass(frozen=True)
class TextEmbedConfig:
    dimension: int = 750
    ngram_min: int = 3
    ngram_max: int = 6
    buckets: int = 2**18
    context_window: int = 5
    negative_samples: int = 5
    epochs: int = 10
    learning_rate: float = 0.025
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.ngram_min < 1 or self.ngram_max < self.ngram_min:
            raise ValidationError("invalid n-gram range")
        for name in ("dimension", "buckets", "context_window", "negative_samples", "epochs"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be at least 1")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "ngram_min": self.ngram_min,
            "ngram_max": self.ngram_max,
            "buckets": self.buckets,
            "context_window": self.context_window,
            "negative_samples": self.negative_samples,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TextEmbedConfig":
        return cls(**{k: d[k] for k in cls().to_dict() if k in d})


def _bucket_init(seed: int, bucket: int, dim: int) -> np.ndarray:
    rng = np.random.default_rng([seed, bucket])
    return (rng.random(dim) - 0.5) / dim


@dataclass
class TextEmbedder:
    """Trained n-gram bucket vectors plus the config needed to hash queries.

    Buckets never touched in training keep their deterministic initialization
    vector, exactly as if the whole bucket matrix had been preallocated; those
    and per-word sums are memoized since queries reuse vocabulary heavily.
    """

    config: TextEmbedConfig
    bucket_vectors: dict[int, np.ndarray]
    _init_cache: dict[int, np.ndarray] = field(default_factory=dict, repr=False, compare=False)
    _word_cache: dict[str, np.ndarray] = field(default_factory=dict, repr=False, compare=False)

    @property
    def dimension(self) -> int:
        return self.config.dimension

    def _buckets_of(self, word: str) -> list[int]:
        cfg = self.config
        return sorted(
            {fnv1a(g) % cfg.buckets for g in char_ngrams(word, cfg.ngram_min, cfg.ngram_max)}
        )

    def _bucket_vector(self, bucket: int) -> np.ndarray:
        vec = self.bucket_vectors.get(bucket)
        if vec is None:
            vec = self._init_cache.get(bucket)
            if vec is None:
                vec = _bucket_init(self.config.rng_seed, bucket, self.config.dimension)
                self._init_cache[bucket] = vec
        return vec

    def word_vector(self, word: str) -> np.ndarray:
        cached = self._word_cache.get(word)
        if cached is None:
            cached = np.zeros(self.config.dimension)
            for bucket in self._buckets_of(word):
                cached += self._bucket_vector(bucket)
            self._word_cache[word] = cached
        return cached


def train_text_embedder(corpus: Sequence[str], cfg: TextEmbedConfig) -> TextEmbedder:
    """Train the subword skip-gram on a document corpus, deterministically.

    A word's constituent buckets are deduplicated (bag of distinct n-grams),
    and each SGD step spreads the word gradient evenly over them so the
    word's sum vector moves by exactly one gradient regardless of n-gram
    count. Negatives for a whole epoch are drawn in one batch.
    """
    docs = [tokenize(doc) for doc in corpus]
    counts: dict[str, int] = {}
    for tokens in docs:
        for tok in tokens:
            counts[tok] = counts.get(tok, 0) + 1
    if not counts:
        raise ValidationError("empty corpus: no tokens to train on")

    words = sorted(counts)
    word_index = {w: i for i, w in enumerate(words)}
    raw_buckets = {
        w: sorted({fnv1a(g) % cfg.buckets for g in char_ngrams(w, cfg.ngram_min, cfg.ngram_max)})
        for w in words
    }

    touched = sorted({b for buckets in raw_buckets.values() for b in buckets})
    bucket_row = {b: i for i, b in enumerate(touched)}
    matrix = np.stack([_bucket_init(cfg.rng_seed, b, cfg.dimension) for b in touched])
    word_rows = {w: np.array([bucket_row[b] for b in raw_buckets[w]]) for w in words}
    vout = np.zeros((len(words), cfg.dimension))

    freq = np.array([counts[w] for w in words], dtype=float) ** 0.75
    cum_noise = np.cumsum(freq / freq.sum())

    rng = np.random.default_rng(cfg.rng_seed)
    lr = cfg.learning_rate
    encoded = [[word_index[t] for t in tokens] for tokens in docs if len(tokens) >= 2]
    n_pairs = sum(
        min(len(seq), pos + cfg.context_window + 1) - max(0, pos - cfg.context_window) - 1
        for seq in encoded
        for pos in range(len(seq))
    )
    for _ in range(cfg.epochs):
        negatives = np.searchsorted(cum_noise, rng.random((max(n_pairs, 1), cfg.negative_samples)))
        pair_idx = 0
        for seq in encoded:
            for pos, center_idx in enumerate(seq):
                rows = word_rows[words[center_idx]]
                v = matrix[rows].sum(axis=0)
                lo = max(0, pos - cfg.context_window)
                hi = min(len(seq), pos + cfg.context_window + 1)
                for ctx_pos in range(lo, hi):
                    if ctx_pos == pos:
                        continue
                    context = seq[ctx_pos]
                    s = _scalar_sigmoid(float(vout[context] @ v))
                    g = lr * (s - 1.0)
                    grad_v = g * vout[context]
                    vout[context] -= g * v
                    for neg in negatives[pair_idx]:
                        if neg == context:
                            continue
                        sn = _scalar_sigmoid(float(vout[neg] @ v))
                        gn = lr * sn
                        grad_v += gn * vout[neg]
                        vout[neg] -= gn * v
                    matrix[rows] -= grad_v / len(rows)
                    v -= grad_v
                    pair_idx += 1

    bucket_vectors = {b: matrix[bucket_row[b]] for b in touched}
    return TextEmbedder(config=cfg, bucket_vectors=bucket_vectors)


def embed_text(embedder: TextEmbedder, text: str) -> np.ndarray:
    """Mean of word vectors; empty or whitespace-only text embeds to zero."""
    tokens = tokenize(text)
    if not tokens:
        return np.zeros(embedder.dimension)
    total = np.zeros(embedder.dimension)
    for tok in tokens:
        total += embedder.word_vector(tok)
    return total / len(tokens)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def summary_text(summary: SopSummary, title: str = "") -> str:
    """The retrieval text for one summary: title plus every condensed section."""
    return " ".join(
        part
        for part in (
            title,
            summary.explanation_summary,
            summary.impact_summary,
            summary.cause_summary,
            summary.steps_summary,
        )
        if part
    )


def embed_summary_pair(
    embedder: TextEmbedder,
    a: SopSummary,
    b: SopSummary,
    titles: Mapping[str, str] | None = None,
) -> np.ndarray:
    """Pair query vector: mean of the two documents' vectors."""
    titles = titles or {}
    va = embed_text(embedder, summary_text(a, titles.get(a.sop_id, "")))
    vb = embed_text(embedder, summary_text(b, titles.get(b.sop_id, "")))
    return (va + vb) / 2.0


@dataclass(frozen=True)
class SampleEntry:
    """One labeled historical pair available for in-context prompting."""

    a: SopSummary
    b: SopSummary
    label: VerdictLabel
    vector: np.ndarray

    def to_dict(self) -> dict:
        return {
            "a": self.a.to_dict(),
            "b": self.b.to_dict(),
            "label": self.label.value,
            "vector": [float(x) for x in self.vector],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SampleEntry":
        return cls(
            a=SopSummary.from_dict(d["a"]),
            b=SopSummary.from_dict(d["b"]),
            label=VerdictLabel(d["label"]),
            vector=np.array(d["vector"], dtype=float),
        )


@dataclass
class SampleBank:
    """Labeled sample pairs with precomputed retrieval vectors."""

    entries: list[SampleEntry] = field(default_factory=list)

    def add(
        self,
        embedder: TextEmbedder,
        a: SopSummary,
        b: SopSummary,
        label: VerdictLabel,
        titles: Mapping[str, str] | None = None,
    ) -> None:
        vec = embed_summary_pair(embedder, a, b, titles)
        self.entries.append(SampleEntry(a=a, b=b, label=label, vector=vec))

    def to_dict(self) -> dict:
        return {"entries": [e.to_dict() for e in self.entries]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SampleBank":
        return cls(entries=[SampleEntry.from_dict(e) for e in d["entries"]])


def nearest_samples(
    embedder: TextEmbedder,
    query: tuple[SopSummary, SopSummary],
    bank: SampleBank,
    titles: Mapping[str, str] | None = None,
) -> tuple[SampleEntry | None, SampleEntry | None]:
    """Top-1 positive and top-1 negative bank entries by cosine similarity.

    Ties break toward the earlier-inserted entry. A label class missing from
    the bank yields ``None`` in its slot and the prompt builder degrades to
    one-shot.
    """
    qvec = embed_summary_pair(embedder, query[0], query[1], titles)
    best: dict[VerdictLabel, tuple[float, SampleEntry]] = {}
    for entry in bank.entries:
        sim = cosine_similarity(qvec, entry.vector)
        current = best.get(entry.label)
        if current is None or sim > current[0]:
            best[entry.label] = (sim, entry)
    positive = best.get(VerdictLabel.CORRELATED)
    negative = best.get(VerdictLabel.NOT_CORRELATED)
    return (
        positive[1] if positive else None,
        negative[1] if negative else None,
    )
