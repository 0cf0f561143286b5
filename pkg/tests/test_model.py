import pytest
from hypothesis import given
from hypothesis import strategies as st

from stormsift.model import (
    Alert,
    AlertCluster,
    AlertType,
    CorrelationVerdict,
    Decision,
    FusionConfig,
    Metrics,
    PairScore,
    Severity,
    SopDocument,
    SopSummary,
    TimeWindow,
    ValidationError,
    VerdictLabel,
    VerdictSource,
    WindowingConfig,
    alert_type_of,
    f1_score,
)


def make_alert(**overrides):
    base = dict(
        id="a1",
        title="disk latency high",
        creation_time=100,
        arrival_time=110,
        service="svc01",
        region="region-0",
        sop_id="SOP-1",
        mitigated_time=200,
        engineer="oce-7",
    )
    base.update(overrides)
    return Alert(**base)


def make_sop(**overrides):
    base = dict(
        id="SOP-1",
        title="Disk latency",
        severity=Severity.MAJOR,
        explanation="exp",
        impact="imp",
        possible_cause="cause",
        mitigation_steps="steps",
    )
    base.update(overrides)
    return SopDocument(**base)


class TestAlertTypeOf:
    def test_identity_mapping(self):
        assert alert_type_of(make_alert(sop_id="OSD-001")).key == "OSD-001"

    def test_same_sop_same_type(self):
        a = make_alert(id="x", sop_id="OSD-001")
        b = make_alert(id="y", sop_id="OSD-001")
        assert alert_type_of(a) == alert_type_of(b)

    def test_missing_sop_rejected(self):
        alert = make_alert(sop_id="x")
        object.__setattr__(alert, "sop_id", "")
        with pytest.raises(ValidationError):
            alert_type_of(alert)


class TestInvariants:
    def test_creation_after_arrival_rejected(self):
        with pytest.raises(ValidationError):
            make_alert(creation_time=200, arrival_time=100)

    def test_mitigated_before_arrival_rejected(self):
        with pytest.raises(ValidationError):
            make_alert(mitigated_time=50)

    def test_correlated_score_must_be_positive(self):
        a = AlertType(key="A", service="s1")
        with pytest.raises(ValidationError):
            PairScore(
                a=a,
                b=a,
                t_ab=0.1,
                t_ba=0.1,
                jaccard=0.1,
                spatial_distance=1.0,
                similarity_score=-0.5,
                decision=Decision.CORRELATED,
            )

    def test_llm_verdict_needs_explanation(self):
        a = AlertType(key="A", service="s1")
        with pytest.raises(ValidationError):
            CorrelationVerdict(
                pair=(a, a), label=VerdictLabel.CORRELATED, source=VerdictSource.LLM_REASONING
            )

    def test_window_math_must_be_integral(self):
        from fractions import Fraction

        with pytest.raises(ValidationError):
            WindowingConfig(start_time=0, window_length=601, slide_fraction=Fraction(1, 2))

    def test_summary_budget_enforced(self):
        with pytest.raises(ValidationError):
            SopSummary(
                sop_id="S",
                explanation_summary="x" * 500,
                impact_summary="",
                cause_summary="",
                steps_summary="",
            )


ROUND_TRIP_CASES = [
    make_alert(),
    make_alert(mitigated_time=None, engineer=None),
    AlertType(key="SOP-1", service="svc01"),
    make_sop(),
    SopSummary(
        sop_id="SOP-1",
        explanation_summary="e",
        impact_summary="i",
        cause_summary="c",
        steps_summary="s",
    ),
    WindowingConfig(start_time=0),
    TimeWindow(index=2, start=600, end=1200, member_types=frozenset({"A", "B"})),
    FusionConfig(alpha=2.5, s_min=0.5, s_max=3.0),
    PairScore(
        a=AlertType(key="A", service="s1"),
        b=AlertType(key="B", service="s2"),
        t_ab=0.5,
        t_ba=0.25,
        jaccard=0.4,
        spatial_distance=1.5,
        similarity_score=0.3,
        decision=Decision.CORRELATED,
    ),
    CorrelationVerdict(
        pair=(AlertType(key="A", service="s1"), AlertType(key="B", service="s2")),
        label=VerdictLabel.CORRELATED,
        source=VerdictSource.LLM_REASONING,
        explanation="shared disk fault",
    ),
    AlertCluster(members=frozenset({"a1", "a2"}), region="region-0"),
    Metrics(tp=3, fp=1, fn=2, tn=10),
]


@pytest.mark.parametrize("value", ROUND_TRIP_CASES, ids=lambda v: type(v).__name__)
def test_serialization_round_trip(value):
    assert type(value).from_dict(value.to_dict()) == value


class TestMetrics:
    def test_zero_denominators_define_zero(self):
        m = Metrics(tp=0, fp=0, fn=0, tn=5)
        assert m.precision == 0.0
        assert m.recall == 0.0
        assert m.f1 == 0.0

    @given(
        st.integers(min_value=0, max_value=10_000),
        st.integers(min_value=0, max_value=10_000),
        st.integers(min_value=0, max_value=10_000),
        st.integers(min_value=0, max_value=10_000),
    )
    def test_identities_on_random_confusions(self, tp, fp, fn, tn):
        m = Metrics(tp=tp, fp=fp, fn=fn, tn=tn)
        expected_p = tp / (tp + fp) if tp + fp else 0.0
        expected_r = tp / (tp + fn) if tp + fn else 0.0
        assert abs(m.precision - expected_p) < 1e-12
        assert abs(m.recall - expected_r) < 1e-12
        assert abs(m.f1 - f1_score(expected_p, expected_r)) < 1e-12

    def test_thousand_random_tuples(self):
        import random

        rng = random.Random(42)
        for _ in range(1000):
            tp, fp, fn, tn = (rng.randint(1, 5000) for _ in range(4))
            m = Metrics(tp=tp, fp=fp, fn=fn, tn=tn)
            p, r = tp / (tp + fp), tp / (tp + fn)
            assert abs(m.precision - p) < 1e-12
            assert abs(m.recall - r) < 1e-12
            assert abs(m.f1 - 2 * p * r / (p + r)) < 1e-12
