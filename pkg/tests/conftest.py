import logging

import numpy as np
import pytest

from lanhar.config import apply_overrides, validate_config
from lanhar.data import IMUWindow

TINY_MODELS = {
    "text": {"d": 64, "layers": 2, "heads": 2, "vocab_size": 2048,
             "train": {"lr": 1e-3, "epochs": 10, "batch_size": 16}},
    "sensor": {"d_model": 64, "train": {"lr": 1e-3, "epochs": 20, "batch_size": 16}},
}


def tiny_config(datasets, run_root, overrides=None, **sections):
    """Desk-scale config: tiny text encoder (2 layers, d=64) and sensor encoder (d_model=64)."""
    raw = {"seed": 0, "run_root": str(run_root), "datasets": datasets,
           **{k: dict(v) for k, v in TINY_MODELS.items()}}
    for key, value in sections.items():
        raw[key] = {**raw.get(key, {}), **value}
    return validate_config(apply_overrides(raw, overrides))


def two_datasets(paths):
    a, b = paths
    return [{"name": "synth_a", "path": str(a)}, {"name": "synth_b", "path": str(b), "role": "target"}]


def random_window(rng, n=120, wid="w0", label=None, rate_hz=20.0):
    return IMUWindow(data=rng.normal(size=(n, 6)), window_id=wid, subject_id="s0",
                     dataset_id="d0", label=label, rate_hz=rate_hz)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(autouse=True)
def _quiet_training_logs(caplog):
    caplog.set_level(logging.WARNING)
    yield


ACCEPTANCE: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
