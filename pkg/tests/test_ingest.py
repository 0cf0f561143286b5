import json
import random
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from stormsift.ingest import (
    Dataset,
    covering_window_indices,
    default_start_time,
    divide_into_windows,
    load_dataset,
    materialized_window_indices,
    parse_sop_file,
    partition_by_region,
    split_chronologically,
    write_alerts_jsonl,
    write_labels_jsonl,
    write_sop_file,
)
from stormsift.model import Alert, Severity, SopDocument, WindowingConfig


def alert(i, t, region="region-0", sop="SOP-1", service="svc01"):
    return Alert(
        id=f"a{i}",
        title="t",
        creation_time=t,
        arrival_time=t,
        service=service,
        region=region,
        sop_id=sop,
    )


def sop(sop_id="SOP-1"):
    return SopDocument(
        id=sop_id,
        title=f"Doc {sop_id}",
        severity=Severity.MINOR,
        explanation="Probes fail.",
        impact="Latency grows.",
        possible_cause="Disk pressure.",
        mitigation_steps="Restart the worker.",
    )


@pytest.fixture
def data_dir(tmp_path):
    sops = tmp_path / "sops"
    sops.mkdir()
    for sid in ("SOP-1", "SOP-2", "SOP-3"):
        write_sop_file(sops, sop(sid))
    alerts = [alert(1, 10), alert(2, 20, sop="SOP-2"), alert(3, 30, sop="SOP-3")]
    write_alerts_jsonl(tmp_path / "alerts.jsonl", alerts)
    write_labels_jsonl(tmp_path / "labels.jsonl", [{"a1", "a2"}])
    return tmp_path


class TestLoadDataset:
    def test_lossless_load(self, data_dir):
        ds = load_dataset(data_dir / "alerts.jsonl", data_dir / "sops")
        assert len(ds.alerts) == 3
        assert not ds.warnings

    def test_missing_sop_skips_with_warning(self, tmp_path):
        sops = tmp_path / "sops"
        sops.mkdir()
        write_sop_file(sops, sop("SOP-1"))
        write_alerts_jsonl(tmp_path / "alerts.jsonl", [alert(1, 10, sop="SOP-GONE")])
        ds = load_dataset(tmp_path / "alerts.jsonl", sops)
        assert len(ds.alerts) == 0
        assert len(ds.warnings) == 1

    def test_labels_identity_parse(self, data_dir):
        ds = load_dataset(
            data_dir / "alerts.jsonl", data_dir / "sops", data_dir / "labels.jsonl"
        )
        assert ds.labels == [{"a1", "a2"}]

    def test_malformed_line_skipped_with_line_number(self, data_dir):
        path = data_dir / "alerts.jsonl"
        path.write_text(path.read_text() + "{not json\n", encoding="utf-8")
        ds = load_dataset(path, data_dir / "sops")
        assert len(ds.alerts) == 3
        assert any("line 4" in w for w in ds.warnings)

    def test_unreadable_path_is_fatal(self, data_dir):
        with pytest.raises(FileNotFoundError):
            load_dataset(data_dir / "nope.jsonl", data_dir / "sops")

    def test_sop_file_round_trip(self, tmp_path):
        doc = sop("SOP-9")
        path = write_sop_file(tmp_path, doc)
        assert parse_sop_file(path) == doc


class TestPartitionByRegion:
    def test_grouping(self):
        ds = Dataset(
            alerts=[alert(1, 10, "R1"), alert(2, 5, "R1"), alert(3, 7, "R2")], sops={}
        )
        parts = partition_by_region(ds)
        assert sorted(parts) == ["R1", "R2"]
        assert [a.id for a in parts["R1"]] == ["a2", "a1"]  # arrival order
        assert len(parts["R2"]) == 1

    def test_single_region_identity(self):
        ds = Dataset(alerts=[alert(1, 10), alert(2, 20)], sops={})
        parts = partition_by_region(ds)
        assert list(parts) == ["region-0"]
        assert [a.id for a in parts["region-0"]] == ["a1", "a2"]

    def test_empty_dataset(self):
        assert partition_by_region(Dataset(alerts=[], sops={})) == {}

    def test_partition_concat_is_original_multiset(self):
        rng = random.Random(5)
        alerts = [
            alert(i, rng.randint(0, 1000), region=f"R{rng.randint(0, 3)}")
            for i in range(50)
        ]
        parts = partition_by_region(Dataset(alerts=alerts, sops={}))
        recombined = [a for region in parts.values() for a in region]
        assert sorted(a.id for a in recombined) == sorted(a.id for a in alerts)


class TestWindows:
    CFG = WindowingConfig(start_time=0, window_length=600, slide_fraction=Fraction(1, 2))

    def test_window_one_spans_300_900(self):
        assert self.CFG.window_span(1) == (300, 900)

    def test_alert_at_450_joins_windows_0_and_1(self):
        windows = divide_into_windows([alert(1, 450)], self.CFG)
        assert [w.index for w in windows] == [0, 1]
        assert all(w.member_types == {"SOP-1"} for w in windows)

    def test_non_overlapping_boundary_alert(self):
        cfg = WindowingConfig(start_time=0, window_length=600, slide_fraction=Fraction(1))
        windows = divide_into_windows([alert(1, 0)], cfg)
        assert [w.index for w in windows] == [0]

    def test_alert_before_start_skipped_with_warning(self):
        warnings = []
        windows = divide_into_windows([alert(1, -10), alert(2, 450)], self.CFG, warnings)
        assert len(warnings) == 1
        assert {w.index for w in windows} == {0, 1}

    def test_member_types_deduplicated(self):
        windows = divide_into_windows([alert(1, 100), alert(2, 101)], self.CFG)
        assert windows[0].member_types == {"SOP-1"}

    def test_empty_windows_omitted(self):
        windows = divide_into_windows([alert(1, 100), alert(2, 5000)], self.CFG)
        indices = [w.index for w in windows]
        assert 5 not in indices or all(w.member_types for w in windows)
        assert all(w.member_types for w in windows)

    def test_half_open_interval(self):
        # end is exclusive: an alert exactly at a window end is not a member
        assert 600 not in range(*self.CFG.window_span(0))
        ks = materialized_window_indices(600, self.CFG)
        assert 0 not in ks and 1 in ks and 2 in ks

    @given(st.integers(min_value=0, max_value=10**9))
    def test_coverage_exactly_two_windows(self, t):
        ks = covering_window_indices(t, self.CFG)
        assert len(ks) == 2
        # brute-force oracle over every candidate index near t
        center = t // 300
        brute = [
            k
            for k in range(center - 4, center + 5)
            if self.CFG.window_span(k)[0] <= t < self.CFG.window_span(k)[1]
        ]
        assert ks == brute

    def test_determinism_and_order_insensitivity(self):
        rng = random.Random(11)
        alerts = [alert(i, rng.randint(0, 5000), sop=f"SOP-{i % 4}") for i in range(40)]
        shuffled = list(alerts)
        rng.shuffle(shuffled)
        sort_key = lambda a: (a.arrival_time, a.id)
        first = divide_into_windows(sorted(alerts, key=sort_key), self.CFG)
        second = divide_into_windows(sorted(shuffled, key=sort_key), self.CFG)
        assert first == second

    def test_default_start_time_floors_to_minute(self):
        assert default_start_time([alert(1, 127)]) == 120


class TestSplit:
    def test_partition_by_threshold(self):
        ds = Dataset(alerts=[alert(1, 10), alert(2, 20), alert(3, 30)], sops={})
        train, test = split_chronologically(ds, 25)
        assert len(train.alerts) == 2
        assert len(test.alerts) == 1

    def test_cutoff_before_all_alerts(self):
        ds = Dataset(alerts=[alert(1, 10)], sops={})
        train, test = split_chronologically(ds, 5)
        assert train.alerts == []
        assert train.warnings

    def test_cross_cutoff_group_assigned_to_earliest_and_pruned(self):
        ds = Dataset(
            alerts=[alert(1, 20), alert(2, 30)],
            sops={},
            labels=[{"a1", "a2"}],
        )
        train, test = split_chronologically(ds, 25)
        assert train.labels == [{"a1"}]
        assert test.labels == []

    def test_sop_catalog_shared(self, data_dir):
        ds = load_dataset(data_dir / "alerts.jsonl", data_dir / "sops")
        train, test = split_chronologically(ds, 25)
        assert train.sops is test.sops
