import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lanhar.data import (
    CANONICAL_LABELS,
    IMUWindow,
    SensorStream,
    SplitSpec,
    WindowCorpus,
    harmonize_label,
    load_alias_table,
    load_dataset,
    make_windows,
    resample,
    split_source,
    write_canonical_csv,
)
from lanhar.errors import ArgumentError, LabelError, LoadError, ParseError, UnsupportedUpsampleError

HEADER = "dataset_id,subject_id,timestamp_s,ax,ay,az,gx,gy,gz,label\n"


def _csv_rows(n, subject="s1", label="walk", rate=20.0, ds="hhar"):
    return "".join(f"{ds},{subject},{i / rate:.6f},0.1,0.2,9.8,0.0,0.0,0.1,{label}\n" for i in range(n))


def _stream(n, rate=20.0, label="walking", fill=None):
    data = np.arange(n * 6, dtype=float).reshape(n, 6) if fill is None else np.full((n, 6), fill)
    return SensorStream(samples=data, rate_hz=rate, subject_id="s0", dataset_id="d0", label=label)


class TestLoadDataset:
    def test_single_subject_alias_label(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text(HEADER + _csv_rows(100))
        streams = load_dataset(p)
        assert len(streams) == 1
        assert len(streams[0]) == 100
        assert streams[0].label == "walking"
        assert streams[0].rate_hz == pytest.approx(20.0)

    def test_two_subjects_grouped(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text(HEADER + _csv_rows(30, "s1") + _csv_rows(40, "s2"))
        streams = load_dataset(p)
        assert sorted((s.subject_id, len(s)) for s in streams) == [("s1", 30), ("s2", 40)]

    def test_short_row_reports_line(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text(HEADER + _csv_rows(3) + "hhar,s1,0.2,0.1,0.2,9.8,0.0,0.0\n")
        with pytest.raises(ParseError) as exc:
            load_dataset(p)
        assert exc.value.line == 5

    def test_missing_file(self, tmp_path):
        with pytest.raises(LoadError):
            load_dataset(tmp_path / "nope.csv")

    def test_unknown_label(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text(HEADER + _csv_rows(5, label="jump"))
        with pytest.raises(LabelError) as exc:
            load_dataset(p)
        assert exc.value.raw == "jump"

    def test_non_numeric_value(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text(HEADER + "hhar,s1,0.0,x,0.2,9.8,0.0,0.0,0.1,walk\n")
        with pytest.raises(ParseError):
            load_dataset(p)

    def test_jsonl_mirror(self, tmp_path):
        p = tmp_path / "a.jsonl"
        keys = ["dataset_id", "subject_id", "timestamp_s", "ax", "ay", "az", "gx", "gy", "gz", "label"]
        lines = [json.dumps(dict(zip(keys, ["uci", "s1", i / 50, 0, 0, 9.8, 0, 0, 0, "laying"])))
                 for i in range(10)]
        p.write_text("\n".join(lines) + "\n")
        (s,) = load_dataset(p, "canonical_jsonl")
        assert s.label == "lying" and s.rate_hz == pytest.approx(50.0)

    def test_csv_round_trip(self, tmp_path, rng):
        streams = [SensorStream(rng.normal(size=(25, 6)), 20.0, "s1", "d", "sitting"),
                   SensorStream(rng.normal(size=(30, 6)), 20.0, "s1", "d", "walking", segment=1)]
        write_canonical_csv(tmp_path / "x.csv", streams)
        back = load_dataset(tmp_path / "x.csv")
        assert [len(s) for s in back] == [25, 30]
        np.testing.assert_array_equal(back[0].samples, streams[0].samples)
        assert [s.label for s in back] == ["sitting", "walking"]


class TestHarmonizeLabel:
    def test_aliases(self):
        assert harmonize_label("walk", "anything") == "walking"
        assert harmonize_label("stairsup", "hhar") == "going_upstairs"
        assert harmonize_label("Walking Upstairs", "uci") == "going_upstairs"

    def test_unknown(self):
        with pytest.raises(LabelError):
            harmonize_label("jump", "hhar")

    @given(st.sampled_from(["walk", "sit", "stand", "laying", "upstairs", "downstairs", "jog", "bike",
                            *CANONICAL_LABELS]))
    def test_idempotent(self, raw):
        once = harmonize_label(raw)
        assert harmonize_label(once) == once
        assert once in CANONICAL_LABELS

    def test_alias_table_file(self, tmp_path):
        p = tmp_path / "aliases.json"
        p.write_text(json.dumps({"mine": {"hop": "jogging"}}))
        table = load_alias_table(p)
        assert harmonize_label("hop", "mine", table) == "jogging"
        p.write_text(json.dumps({"mine": {"hop": "hopping"}}))
        with pytest.raises(LabelError):
            load_alias_table(p)


class TestResample:
    def test_50_to_20_count(self):
        out = resample(_stream(500, rate=50.0), 20.0)
        expected = math.floor(500 * 20 / 50)  # count from the rate ratio
        assert abs(len(out) - expected) <= 1
        assert out.rate_hz == 20.0

    def test_identity(self):
        s = _stream(64)
        out = resample(s, 20.0)
        np.testing.assert_array_equal(out.samples, s.samples)

    def test_constant(self):
        out = resample(_stream(200, rate=50.0, fill=3.5), 20.0)
        assert np.all(out.samples == 3.5)

    def test_upsample_rejected(self):
        with pytest.raises(UnsupportedUpsampleError):
            resample(_stream(50, rate=10.0), 20.0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(20, 400), st.sampled_from([25.0, 32.0, 50.0, 100.0]), st.integers(0, 10_000))
    def test_no_overshoot(self, n, rate, seed):
        s = SensorStream(np.random.default_rng(seed).normal(size=(n, 6)), rate, "s", "d")
        out = resample(s, 20.0)
        assert np.all(out.samples.min(axis=0) >= s.samples.min(axis=0) - 1e-12)
        assert np.all(out.samples.max(axis=0) <= s.samples.max(axis=0) + 1e-12)


class TestMakeWindows:
    @pytest.mark.parametrize("n,length,stride", [(240, 120, 60), (120, 120, 60), (100, 120, 60),
                                                 (1000, 37, 11)])
    def test_count(self, n, length, stride):
        expected = (n - length) // stride + 1 if n >= length else 0
        assert len(make_windows(_stream(n), length, stride)) == expected

    def test_inherits_ids(self):
        w = make_windows(_stream(240), 120, 60)[1]
        assert (w.label, w.subject_id, w.dataset_id) == ("walking", "s0", "d0")
        assert w.window_id == "d0:s0:0:60"

    def test_stride_equal_length_reconstructs_prefix(self):
        s = _stream(250)
        wins = make_windows(s, 50, 50)
        np.testing.assert_array_equal(np.concatenate([w.data for w in wins]), s.samples[:250])

    def test_bad_args(self):
        with pytest.raises(ArgumentError):
            make_windows(_stream(10), 0, 1)


def _windows(n, labels=("walking", "sitting")):
    rng = np.random.default_rng(1)
    return [IMUWindow(rng.normal(size=(8, 6)), f"w{i}", label=labels[i % len(labels)]) for i in range(n)]


class TestSplitSource:
    def test_counts(self):
        train, val = split_source(_windows(10), SplitSpec(0.8, seed=3))
        assert (len(train), len(val)) == (8, 2)

    def test_deterministic(self):
        a = split_source(_windows(20), SplitSpec(0.8, 5))
        b = split_source(_windows(20), SplitSpec(0.8, 5))
        assert [w.window_id for w in a[0]] == [w.window_id for w in b[0]]

    def test_all_train(self):
        train, val = split_source(_windows(7), SplitSpec(1.0))
        assert len(train) == 7 and val == []

    def test_empty(self):
        with pytest.raises(ArgumentError):
            split_source([], SplitSpec())

    @given(st.integers(1, 60), st.floats(0.05, 1.0), st.integers(0, 100))
    def test_partition(self, n, frac, seed):
        wins = _windows(n, labels=("a", "b", "c"))
        train, val = split_source(wins, SplitSpec(frac, seed))
        ids_t, ids_v = {w.window_id for w in train}, {w.window_id for w in val}
        assert not ids_t & ids_v
        assert ids_t | ids_v == {w.window_id for w in wins}
        assert len(train) == math.floor(frac * n + 0.5)


class TestWindowCorpus:
    def test_round_trip(self, tmp_path):
        wins = _windows(5)
        WindowCorpus(wins, ["train", "train", "val", "target", "target"]).save(tmp_path / "c")
        back = WindowCorpus.load(tmp_path / "c")
        assert [w.window_id for w in back.select("target")] == ["w3", "w4"]
        np.testing.assert_array_equal(back.windows[2].data, wins[2].data)

    def test_unique_ids(self):
        w = _windows(1)[0]
        with pytest.raises(ArgumentError):
            WindowCorpus([w, w])

    def test_window_invariants(self):
        with pytest.raises(ArgumentError):
            IMUWindow(np.zeros((10, 5)), "bad")
        with pytest.raises(ArgumentError):
            IMUWindow(np.full((10, 6), np.nan), "bad")
