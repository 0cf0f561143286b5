import pytest
from hypothesis import given
from hypothesis import strategies as st

from stormsift.fusion import (
    ALPHA_GRID,
    calibrate_alpha,
    classify_pair,
    fit_normalization,
    normalized_distance,
    similarity_score,
)
from stormsift.model import Decision, FusionConfig

probs = st.floats(min_value=0.0, max_value=1.0)
distances = st.floats(min_value=0.0, max_value=100.0)


class TestFitNormalization:
    def test_min_max(self):
        assert fit_normalization([1.0, 3.0, 2.0]) == (1.0, 3.0)

    def test_singleton_degenerate(self):
        s_min, s_max = fit_normalization([2.0])
        assert (s_min, s_max) == (2.0, 2.0)
        assert FusionConfig(s_min=s_min, s_max=s_max).degenerate

    def test_empty_list_errors(self):
        with pytest.raises(ValueError):
            fit_normalization([])

    def test_negative_distance_rejected(self):
        with pytest.raises(ValueError):
            fit_normalization([-1.0, 2.0])

    def test_degenerate_normalization_returns_half(self):
        cfg = FusionConfig(s_min=2.0, s_max=2.0)
        assert normalized_distance(0.0, cfg) == 0.5
        assert normalized_distance(99.0, cfg) == 0.5


class TestSimilarityScore:
    def test_linear_combination_direct(self):
        # normalized S of 0.1 with alpha 3.5 -> 0.8 - 0.35
        cfg = FusionConfig(alpha=3.5, s_min=0.0, s_max=1.0)
        assert similarity_score(0.8, 0.6, 0.1, cfg) == pytest.approx(0.45)

    def test_spatial_term_vanishes_at_s_min(self):
        cfg = FusionConfig(alpha=3.5, s_min=1.0, s_max=4.0)
        assert similarity_score(0.7, 0.2, 1.0, cfg) == pytest.approx(0.7)

    def test_zero_temporal_never_positive(self):
        cfg = FusionConfig(alpha=3.5, s_min=0.0, s_max=1.0)
        for s in (0.0, 0.5, 2.0):
            assert similarity_score(0.0, 0.0, s, cfg) <= 0.0

    def test_out_of_range_distance_clamped(self):
        cfg = FusionConfig(alpha=2.0, s_min=1.0, s_max=2.0)
        assert similarity_score(1.0, 0.0, 50.0, cfg) == pytest.approx(1.0 - 2.0)
        assert similarity_score(1.0, 0.0, 0.0, cfg) == pytest.approx(1.0)

    @given(probs, probs, distances, distances)
    def test_monotone_in_temporal_and_spatial(self, t1, t2, s_low, s_high):
        cfg = FusionConfig(alpha=3.5, s_min=0.0, s_max=10.0)
        s_low, s_high = sorted((s_low, s_high))
        assert similarity_score(t1, t2, s_low, cfg) >= similarity_score(t1, t2, s_high, cfg)
        bumped = min(1.0, max(t1, t2) + 0.1)
        assert similarity_score(bumped, bumped, s_low, cfg) >= similarity_score(t1, t2, s_low, cfg)


class TestClassifyPair:
    def test_positive_score_correlates(self):
        assert classify_pair(0.45, noise=False) is Decision.CORRELATED

    def test_zero_score_goes_to_llm(self):
        assert classify_pair(0.0, noise=False) is Decision.UNCERTAIN

    def test_noise_takes_precedence(self):
        assert classify_pair(0.9, noise=True) is Decision.NOISE

    @given(st.floats(min_value=1e-9, max_value=100.0), st.floats(min_value=1.0, max_value=10.0))
    def test_decision_invariant_under_positive_rescaling(self, score, scale):
        assert classify_pair(score, False) == classify_pair(score * scale, False)
        assert classify_pair(-score, False) == classify_pair(-score * scale, False)


class TestCalibrateAlpha:
    def test_distant_false_pairs_need_alpha(self):
        # positives: strong temporal, tiny distance; negatives: temporal 0.95
        # at normalized distance 0.5, so only alpha >= 0.95/0.5 = 1.9 (grid:
        # 2.0) pushes them negative
        pairs = [(0.9, 0.8, 0.0)] * 5 + [(0.95, 0.9, 0.5)] * 5
        labels = [True] * 5 + [False] * 5
        alpha = calibrate_alpha(pairs, labels, s_min=0.0, s_max=1.0)
        assert alpha >= 2.0
        # oracle: exhaustively verify the chosen alpha reaches max F1
        def f1_at(a):
            cfg = FusionConfig(alpha=a, s_min=0.0, s_max=1.0)
            tp = sum(1 for (t1, t2, s), y in zip(pairs, labels) if y and similarity_score(t1, t2, s, cfg) > 0)
            fp = sum(1 for (t1, t2, s), y in zip(pairs, labels) if not y and similarity_score(t1, t2, s, cfg) > 0)
            fn = sum(labels) - tp
            p = tp / (tp + fp) if tp + fp else 0.0
            r = tp / (tp + fn) if tp + fn else 0.0
            return 2 * p * r / (p + r) if p + r else 0.0

        assert f1_at(alpha) == max(f1_at(a) for a in ALPHA_GRID)

    def test_perfect_temporal_separation_ties_to_zero(self):
        pairs = [(0.9, 0.9, 0.5), (0.0, 0.0, 0.5)]
        labels = [True, False]
        assert calibrate_alpha(pairs, labels, s_min=0.0, s_max=1.0) == 0.0

    def test_grid_contains_production_operating_point(self):
        assert 3.5 in ALPHA_GRID
        assert len(ALPHA_GRID) == 21

    def test_result_is_grid_member_and_deterministic(self):
        pairs = [(0.8, 0.2, 0.1), (0.6, 0.1, 0.9), (0.2, 0.9, 0.4), (0.1, 0.0, 0.2)]
        labels = [True, False, True, False]
        first = calibrate_alpha(pairs, labels)
        assert first in ALPHA_GRID
        assert calibrate_alpha(pairs, labels) == first

    def test_degenerate_labels_rejected(self):
        with pytest.raises(ValueError, match="cannot calibrate"):
            calibrate_alpha([(0.5, 0.5, 0.5)], [True])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            calibrate_alpha([(0.5, 0.5, 0.5)], [True, False])
