import pytest

from lanhar.config import ExperimentConfig, apply_overrides, derive_seed, load_config, validate_config
from lanhar.errors import ConfigError


class TestLoadConfig:
    def test_empty_file_defaults(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text("")
        cfg = load_config(p)
        assert cfg.preprocess.rate_hz == 20.0
        assert (cfg.sensor.d_model, cfg.sensor.heads, cfg.sensor.layers) == (768, 2, 3)
        assert cfg.text.d == 768
        assert cfg.text.train.lr == 1e-5 and cfg.sensor.train.lr == 1e-5
        assert cfg.text.train.batch_size == 32
        assert len(cfg.fingerprint) == 16 and int(cfg.fingerprint, 16) >= 0
        assert cfg.fingerprint == ExperimentConfig().fingerprint

    def test_no_path_is_defaults(self):
        assert load_config(None).fingerprint == ExperimentConfig().fingerprint

    def test_lr_override_changes_fingerprint(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text("[text.train]\nlr = 3e-5\n")
        cfg = load_config(p)
        assert cfg.text.train.lr == 3e-5
        assert cfg.fingerprint != ExperimentConfig().fingerprint
        assert load_config(None, ["text.train.lr=3e-5"]).fingerprint == cfg.fingerprint

    def test_negative_batch_size(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text("[sensor.train]\nbatch_size = -4\n")
        with pytest.raises(ConfigError) as exc:
            load_config(p)
        assert exc.value.keys == ["sensor.train.batch_size"]

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text("[preprocess]\nwindow = 100\n")
        with pytest.raises(ConfigError) as exc:
            load_config(p)
        assert exc.value.keys == ["preprocess.window"]

    def test_type_mismatch(self):
        with pytest.raises(ConfigError) as exc:
            load_config(None, ['preprocess.window_len="long"'])
        assert "preprocess.window_len" in exc.value.keys

    def test_non_canonical_activity(self):
        with pytest.raises(ConfigError):
            load_config(None, ['eval.common_activities=["walking", "moonwalking"]'])

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.toml")

    def test_bad_toml(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text("[preprocess\n")
        with pytest.raises(ConfigError):
            load_config(p)


class TestOverrides:
    def test_literals(self):
        raw = apply_overrides({}, ["seed=7", "backend.kind=\"replay\"", "eval.common_activities=[\"sitting\"]",
                                   "filter.enabled=false", "run_root=plain"])
        assert raw == {"seed": 7, "backend": {"kind": "replay"}, "eval": {"common_activities": ["sitting"]},
                       "filter": {"enabled": False}, "run_root": "plain"}

    def test_does_not_mutate(self):
        base = {"seed": 1}
        apply_overrides(base, ["seed=2"])
        assert base == {"seed": 1}

    def test_malformed(self):
        with pytest.raises(ConfigError):
            apply_overrides({}, ["seed"])
        with pytest.raises(ConfigError):
            apply_overrides({"seed": 1}, ["seed.x=2"])

    def test_fingerprint_stable_and_order_free(self):
        a = validate_config({"seed": 3, "filter": {"k": 4}})
        b = validate_config({"filter": {"k": 4}, "seed": 3})
        assert a.fingerprint == b.fingerprint


class TestDeriveSeed:
    def test_stable_and_distinct(self):
        assert derive_seed(0, "split") == derive_seed(0, "split")
        assert derive_seed(0, "split") != derive_seed(0, "filter")
        assert derive_seed(0, "split") != derive_seed(1, "split")
        assert 0 <= derive_seed(123, "x") < 2 ** 32
