import random
from fractions import Fraction

import pytest

from stormsift.clustering import (
    clusters_to_pairs,
    cowindowed_pair_universe,
    evaluate,
    expand_clusters,
    merge_verdicts,
)
from stormsift.model import (
    Alert,
    AlertType,
    CorrelationVerdict,
    VerdictLabel,
    VerdictSource,
    WindowingConfig,
)

CFG = WindowingConfig(start_time=0, window_length=600, slide_fraction=Fraction(1, 2))


def alert(i, t, sop, service="svc"):
    return Alert(
        id=f"a{i}",
        title="t",
        creation_time=t,
        arrival_time=t,
        service=service,
        region="region-0",
        sop_id=sop,
    )


def correlated(a, b):
    return CorrelationVerdict(
        pair=(AlertType(key=a, service="s"), AlertType(key=b, service="s")),
        label=VerdictLabel.CORRELATED,
        source=VerdictSource.STATISTICAL,
    )


def not_correlated(a, b):
    return CorrelationVerdict(
        pair=(AlertType(key=a, service="s"), AlertType(key=b, service="s")),
        label=VerdictLabel.NOT_CORRELATED,
        source=VerdictSource.STATISTICAL,
    )


class TestMergeVerdicts:
    def test_single_union(self):
        alerts = [alert(1, 100, "A"), alert(2, 150, "B")]
        clusters = merge_verdicts(alerts, [correlated("A", "B")], CFG)
        assert [sorted(c.members) for c in clusters] == [["a1", "a2"]]

    def test_window_guard_blocks_distant_instances(self):
        alerts = [alert(1, 100, "A"), alert(2, 5000, "B")]
        clusters = merge_verdicts(alerts, [correlated("A", "B")], CFG)
        assert sorted(sorted(c.members) for c in clusters) == [["a1"], ["a2"]]

    def test_transitive_chain(self):
        alerts = [alert(1, 100, "A"), alert(2, 200, "B"), alert(3, 300, "C")]
        verdicts = [correlated("A", "B"), correlated("B", "C"), not_correlated("A", "C")]
        clusters = merge_verdicts(alerts, verdicts, CFG)
        assert [sorted(c.members) for c in clusters] == [["a1", "a2", "a3"]]

    def test_not_correlated_never_merges(self):
        alerts = [alert(1, 100, "A"), alert(2, 150, "B")]
        clusters = merge_verdicts(alerts, [not_correlated("A", "B")], CFG)
        assert len(clusters) == 2

    def test_same_type_self_pair_merges_instances(self):
        alerts = [alert(1, 100, "A"), alert(2, 150, "A")]
        clusters = merge_verdicts(alerts, [correlated("A", "A")], CFG)
        assert len(clusters) == 1

    def test_output_partitions_input(self):
        rng = random.Random(3)
        alerts = [alert(i, rng.randint(0, 4000), f"T{i % 5}") for i in range(30)]
        verdicts = [correlated("T0", "T1"), correlated("T2", "T3")]
        clusters = merge_verdicts(alerts, verdicts, CFG)
        seen = sorted(m for c in clusters for m in c.members)
        assert seen == sorted(a.id for a in alerts)

    def test_mixed_regions_rejected(self):
        alerts = [alert(1, 100, "A"), alert(2, 150, "B")]
        object.__setattr__(alerts[1], "region", "other")
        with pytest.raises(ValueError):
            merge_verdicts(alerts, [], CFG)


class TestClustersToPairs:
    def test_three_members_six_pairs(self):
        assert len(clusters_to_pairs({"a", "b", "c"})) == 6

    def test_singleton_no_pairs(self):
        assert clusters_to_pairs({"a"}) == set()

    def test_two_members_both_orders(self):
        assert clusters_to_pairs({"x", "y"}) == {("x", "y"), ("y", "x")}

    @pytest.mark.parametrize("m", range(1, 51))
    def test_cardinality_formula(self, m):
        members = {f"i{k}" for k in range(m)}
        assert len(clusters_to_pairs(members)) == m * m - m


class TestEvaluate:
    def test_hand_enumerated_example(self):
        # universe {a,b,c,d}: truth {{a,b}}, predicted {{a,b,c}}
        metrics = evaluate(
            predicted=[{"a", "b", "c"}],
            truth=[{"a", "b"}],
            universe={"a", "b", "c", "d"},
        )
        assert (metrics.tp, metrics.fp, metrics.fn) == (2, 4, 0)
        assert metrics.precision == pytest.approx(1 / 3)
        assert metrics.recall == 1.0
        assert metrics.tn == 12 - 6

    def test_perfect_match(self):
        metrics = evaluate([{"a", "b"}, {"c"}], [{"a", "b"}, {"c"}])
        assert metrics.precision == metrics.recall == metrics.f1 == 1.0

    def test_unknown_ids_rejected(self):
        with pytest.raises(ValueError, match="ghost"):
            evaluate([{"a", "ghost"}], [{"a"}], universe={"a"})

    def test_pair_universe_restricts_counting(self):
        universe_pairs = {("a", "b"), ("b", "a")}
        metrics = evaluate(
            predicted=[{"a", "b", "c"}],
            truth=[{"a", "b"}],
            pair_universe=universe_pairs,
        )
        assert (metrics.tp, metrics.fp, metrics.fn, metrics.tn) == (2, 0, 0, 0)

    def test_wrong_member_adds_two_m_false_positives(self):
        for m in (2, 5, 9):
            good = {f"g{i}" for i in range(m)}
            truth = [set(good)]
            base = evaluate([set(good)], truth).fp
            grown = evaluate([good | {"intruder"}], truth).fp
            assert grown - base == 2 * m

    def test_relabeling_symmetry(self):
        predicted = [{"a", "b"}, {"c", "d"}]
        truth = [{"a", "b", "c"}]
        mapping = {"a": "w", "b": "x", "c": "y", "d": "z"}
        renamed_pred = [{mapping[i] for i in g} for g in predicted]
        renamed_truth = [{mapping[i] for i in g} for g in truth]
        assert evaluate(predicted, truth) == evaluate(renamed_pred, renamed_truth)

    def test_f1_matches_independent_recomputation(self):
        rng = random.Random(9)
        ids = [f"n{i}" for i in range(20)]
        predicted = [set(ids[0:7]), set(ids[7:12])]
        truth = [set(ids[0:5]), set(ids[5:12])]
        metrics = evaluate(predicted, truth, universe=set(ids))
        pred_pairs = expand_clusters(predicted)
        truth_pairs = expand_clusters(truth)
        tp = len(pred_pairs & truth_pairs)
        p = tp / len(pred_pairs)
        r = tp / len(truth_pairs)
        assert abs(metrics.f1 - 2 * p * r / (p + r)) < 1e-12


class TestCowindowedUniverse:
    def test_only_shared_window_pairs(self):
        alerts = [alert(1, 100, "A"), alert(2, 200, "B"), alert(3, 5000, "C")]
        pairs = cowindowed_pair_universe(alerts, CFG)
        assert ("a1", "a2") in pairs and ("a2", "a1") in pairs
        assert ("a1", "a3") not in pairs
