"""Multi-setting protocols: every ordered (source, target) pair of the configured datasets.

Each pair runs as an independent pipeline under ``<out>/settings/<source>__<target>/``
with its own config (and fingerprint). All pairs share one response cache, so
interpretations are requested from the backend once per distinct prompt.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

from .config import ExperimentConfig
from .errors import ArgumentError
from .metrics import setting_name, summary_csv
from .pipeline import Pipeline, _write_json

log = logging.getLogger(__name__)


@dataclass
class SettingResult:
    setting: str
    source: str
    target: str
    status: str  # ok | failed | skipped
    run_dir: str
    fingerprint: str
    report: dict | None = None
    error: str | None = None
    warning: str | None = None


def pair_config(config: ExperimentConfig, source: str, target: str, protocol: str) -> ExperimentConfig:
    """Copy of ``config`` with exactly the two datasets, roles set, protocol fixed."""
    raw = config.model_dump(mode="json")
    by_name = {d["name"]: d for d in raw["datasets"]}
    raw["datasets"] = [{**by_name[source], "role": "source"}, {**by_name[target], "role": "target"}]
    raw["eval"]["protocol"] = protocol
    return ExperimentConfig.model_validate(raw)


def _out_dir(config: ExperimentConfig, base_dir: Path, out_dir, protocol: str) -> Path:
    if out_dir is not None:
        return Path(out_dir)
    root = Path(config.run_root)
    root = root if root.is_absolute() else base_dir / root
    return root / config.fingerprint / protocol


def _run_pairs(config: ExperimentConfig, protocol: str, base_dir=None, out_dir=None) -> dict:
    names = [d.name for d in config.datasets]
    if len(names) < 2:
        raise ArgumentError(f"{protocol} needs at least 2 datasets, got {len(names)}")
    if len(set(names)) != len(names):
        raise ArgumentError(f"dataset names must be unique: {names}")
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    out = _out_dir(config, base_dir, out_dir, protocol)
    cache_dir = None if config.backend.cache_dir else out / "cache"
    results: list[SettingResult] = []
    for s in names:
        for t in names:
            if s == t:
                continue
            cfg = pair_config(config, s, t, protocol)
            run_dir = out / "settings" / f"{s}__{t}"
            res = SettingResult(setting=setting_name(s, t), source=s, target=t, status="ok",
                                run_dir=str(run_dir.relative_to(out)), fingerprint=cfg.fingerprint)
            try:
                pipe = Pipeline(cfg, base_dir=base_dir, run_dir=run_dir, cache_dir=cache_dir)
                ev = pipe.run_all()["evaluate"]
                res.status = ev["status"]
                res.report = ev.get("report")
                res.warning = ev.get("warning")
            except Exception as exc:  # one broken pair must not stop the matrix
                log.error("setting %s failed: %s", res.setting, exc)
                res.status, res.error = "failed", f"{type(exc).__name__}: {exc}"
            results.append(res)
    ok = {r.setting: r.report for r in results if r.status == "ok" and r.report}
    metrics = (("Accuracy", "accuracy"), ("F1", "macro_f1"))
    if protocol == "new_activity":
        metrics = (("Accuracy", "accuracy"),)
    table = summary_csv(names, ok, metrics)
    summary = {"fingerprint": config.fingerprint, "protocol": protocol, "datasets": names,
               "settings": [asdict(r) for r in results]}
    _write_json(out / "settings.json", summary)
    (out / "summary.csv").write_text(table)
    (out / "settings.csv").write_text(_long_csv(results))
    summary["summary_csv"] = table
    summary["out_dir"] = str(out)
    return summary


def _long_csv(results: list[SettingResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["setting", "source", "target", "status", "n_windows", "accuracy", "macro_f1",
                "category_accuracy", "fingerprint", "error"])
    for r in results:
        rep = r.report
        w.writerow([r.setting, r.source, r.target, r.status, rep["n_windows"] if rep else "",
                    *(f"{rep[k]:.6f}" if rep else "" for k in ("accuracy", "macro_f1", "category_accuracy")),
                    r.fingerprint, r.error or ""])
    return buf.getvalue()


def run_cross_dataset(config: ExperimentConfig, base_dir=None, out_dir=None) -> dict:
    """Train on each source, evaluate on the full target, for every ordered pair."""
    return _run_pairs(config, "cross_dataset", base_dir, out_dir)


def run_new_activity(config: ExperimentConfig, base_dir=None, out_dir=None) -> dict:
    """Train on the common activities; score only target windows of unseen activities.

    Pairs whose target holds no unseen activity are reported as skipped.
    """
    result = _run_pairs(config, "new_activity", base_dir, out_dir)
    for r in result["settings"]:
        if r["status"] == "skipped":
            log.warning("setting %s skipped: %s", r["setting"], r["warning"])
    return result


def evaluate(config: ExperimentConfig, base_dir=None, run_dir=None, cache_dir=None) -> dict:
    """Dispatch on ``eval.protocol``.

    ``single`` (and ``new_activity`` with an explicit target dataset) runs one
    pipeline; the matrix protocols run every ordered pair.
    """
    protocol = config.eval.protocol
    has_target = any(d.role == "target" for d in config.datasets)
    if protocol == "cross_dataset" or (protocol == "new_activity" and not has_target):
        fn = run_cross_dataset if protocol == "cross_dataset" else run_new_activity
        return fn(config, base_dir=base_dir, out_dir=run_dir)
    pipe = Pipeline(config, base_dir=base_dir, run_dir=run_dir, cache_dir=cache_dir)
    return pipe.evaluate()
