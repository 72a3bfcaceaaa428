import csv
import io
import json

import pytest
from conftest import tiny_config

from lanhar.errors import ArgumentError
from lanhar.experiments import evaluate, pair_config, run_cross_dataset, run_new_activity
from lanhar.synthetic import write_synthetic_suite

FAST = ["text.train.epochs=1", "sensor.train.epochs=1"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("exp")
    paths = write_synthetic_suite(root, 2, n_subjects=2, seconds=12.0)
    broken = root / "broken.csv"
    broken.write_text("dataset_id,subject_id,timestamp_s,ax,ay,az,gx,gy,gz,label\nx,s,0.0,1,2\n")
    return root, paths, broken


def _datasets(paths, broken=None):
    out = [{"name": p.stem, "path": str(p)} for p in paths]
    if broken is not None:
        out.append({"name": "broken", "path": str(broken)})
    return out


class TestPairConfig:
    def test_roles_and_protocol(self, data, tmp_path):
        _, paths, broken = data
        cfg = tiny_config(_datasets(paths, broken), tmp_path)
        pc = pair_config(cfg, "broken", "synth_a", "cross_dataset")
        assert [(d.name, d.role) for d in pc.datasets] == [("broken", "source"), ("synth_a", "target")]
        assert pc.eval.protocol == "cross_dataset" and pc.fingerprint != cfg.fingerprint
        assert pc.text == cfg.text


class TestCrossDataset:
    def test_two_datasets_two_pairs(self, data, tmp_path):
        _, paths, _ = data
        cfg = tiny_config(_datasets(paths), tmp_path, FAST)
        res = run_cross_dataset(cfg, out_dir=tmp_path / "out")
        assert [s["setting"] for s in res["settings"]] == ["synth_a->synth_b", "synth_b->synth_a"]
        assert all(s["status"] == "ok" for s in res["settings"])
        rows = list(csv.reader(io.StringIO(res["summary_csv"])))
        assert rows[0] == ["Metric", "synth_a->synth_b", "synth_b->synth_a", "Average"]
        assert [r[0] for r in rows[1:]] == ["Accuracy", "F1"]
        saved = json.loads((tmp_path / "out" / "settings.json").read_text())
        assert saved["fingerprint"] == cfg.fingerprint
        assert (tmp_path / "out" / "cache").is_dir()

    def test_failure_isolated(self, data, tmp_path):
        _, paths, broken = data
        cfg = tiny_config(_datasets(paths, broken), tmp_path, FAST)
        res = run_cross_dataset(cfg, out_dir=tmp_path / "out")
        status = {s["setting"]: s["status"] for s in res["settings"]}
        assert len(status) == 6
        assert status["synth_a->synth_b"] == status["synth_b->synth_a"] == "ok"
        assert all(v == "failed" for k, v in status.items() if "broken" in k)
        failed = [s for s in res["settings"] if s["status"] == "failed"]
        assert all("ParseError" in s["error"] for s in failed)
        long = list(csv.DictReader(io.StringIO((tmp_path / "out" / "settings.csv").read_text())))
        assert {r["setting"]: r["status"] for r in long} == status

    def test_needs_two_datasets(self, data, tmp_path):
        _, paths, _ = data
        with pytest.raises(ArgumentError):
            run_cross_dataset(tiny_config(_datasets(paths[:1]), tmp_path))

    def test_evaluate_dispatch(self, data, tmp_path):
        _, paths, _ = data
        cfg = tiny_config(_datasets(paths), tmp_path, FAST + ['eval.protocol="cross_dataset"'])
        res = evaluate(cfg, run_dir=tmp_path / "m")
        assert res["protocol"] == "cross_dataset" and len(res["settings"]) == 2


class TestNewActivity:
    def test_no_new_activity_skipped(self, data, tmp_path, caplog):
        _, paths, _ = data
        cfg = tiny_config(_datasets(paths), tmp_path,
                          FAST + ['eval.common_activities=["sitting","walking","jogging"]'])
        res = run_new_activity(cfg, out_dir=tmp_path / "na")
        assert [s["status"] for s in res["settings"]] == ["skipped", "skipped"]
        assert "skipped" in caplog.text
        rows = list(csv.reader(io.StringIO(res["summary_csv"])))
        assert [r[0] for r in rows] == ["Metric", "Accuracy"]

    def test_new_activity_scored(self, data, tmp_path):
        _, paths, _ = data
        cfg = tiny_config(_datasets(paths), tmp_path, FAST + ['eval.common_activities=["sitting","walking"]'])
        res = run_new_activity(cfg, out_dir=tmp_path / "na")
        for s in res["settings"]:
            assert s["status"] == "ok"
            assert set(s["report"]["labels"]) >= {"jogging"}
