"""Fusing temporal and spatial evidence into one similarity score.

The score is ``max(T_ab, T_ba) - alpha * normalized_spatial_distance``; a
strictly positive score marks the pair correlated, anything else is routed to
the LLM stage. The spatial normalization bounds come from training pairs and
test-time values outside that range are clamped into [0, 1]. Alpha is tuned
by grid search over 0..10 in steps of 0.5.
"""

from __future__ import annotations

from typing import Sequence

from .model import Decision, FusionConfig, Metrics

ALPHA_GRID = [round(0.5 * i, 1) for i in range(21)]


def fit_normalization(distances: Sequence[float]) -> tuple[float, float]:
    """Min/max spatial distance over training pairs.

    A degenerate fit (all distances equal) makes later normalization return
    0.5 for every input.
    """
    if not distances:
        raise ValueError("cannot fit normalization on an empty distance list")
    if min(distances) < 0:
        raise ValueError("spatial distances must be non-negative")
    return float(min(distances)), float(max(distances))


def normalized_distance(s: float, cfg: FusionConfig) -> float:
    if cfg.degenerate:
        return 0.5
    scaled = (s - cfg.s_min) / (cfg.s_max - cfg.s_min)
    return min(1.0, max(0.0, scaled))


def similarity_score(t_ab: float, t_ba: float, s: float, cfg: FusionConfig) -> float:
    """Combined score: temporal confidence minus the scaled spatial distance."""
    return max(t_ab, t_ba) - cfg.alpha * normalized_distance(s, cfg)


def classify_pair(score: float, noise: bool) -> Decision:
    """Noise wins outright; otherwise only a strictly positive score correlates.

    A score of exactly 0 goes to the LLM: boundary cases belong with the
    richer analyzer.
    """
    if noise:
        return Decision.NOISE
    if score > 0:
        return Decision.CORRELATED
    return Decision.UNCERTAIN


def calibrate_alpha(
    pairs: Sequence[tuple[float, float, float]],
    labels: Sequence[bool],
    s_min: float | None = None,
    s_max: float | None = None,
) -> float:
    """Grid-search alpha maximizing F1 of the statistics-only classifier.

    ``pairs`` carries ``(t_ab, t_ba, spatial_distance)`` per labeled training
    pair. Ties break toward the smaller alpha. Needs at least one positive and
    one negative label; otherwise calibration is meaningless.
    """
    if len(pairs) != len(labels):
        raise ValueError("pairs and labels must have equal length")
    if not any(labels) or all(labels):
        raise ValueError("cannot calibrate: need both positive and negative labels")
    if s_min is None or s_max is None:
        s_min, s_max = fit_normalization([s for (_, _, s) in pairs])

    best_alpha, best_f1 = ALPHA_GRID[0], -1.0
    for alpha in ALPHA_GRID:
        cfg = FusionConfig(alpha=alpha, s_min=s_min, s_max=s_max)
        tp = fp = fn = tn = 0
        for (t_ab, t_ba, s), positive in zip(pairs, labels):
            predicted = similarity_score(t_ab, t_ba, s, cfg) > 0
            if predicted and positive:
                tp += 1
            elif predicted:
                fp += 1
            elif positive:
                fn += 1
            else:
                tn += 1
        f1 = Metrics(tp=tp, fp=fp, fn=fn, tn=tn).f1
        if f1 > best_f1:
            best_alpha, best_f1 = alpha, f1
    return best_alpha
