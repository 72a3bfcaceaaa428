"""Stage orchestration over a run directory.

Layout under ``runs/<fingerprint>/``::

    data/             windows, ingest summary, per-window statistics
    cache/            LLM response cache (shareable between runs)
    interpretations/  sensor / label interpretations, filtered sensor set
    checkpoints/      text/ (stage 1) and sensor/ (stage 2 inference artifact)
    banks/            label bank
    reports/          metrics logs, filter report, predictions, evaluation

Every JSON artifact carries the config fingerprint. Cheap data stages run on
demand; missing model artifacts raise :class:`DependencyError`.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import os
import tempfile
import threading
from pathlib import Path
from typing import Iterable

import numpy as np
import torch

from .bank import LabelBank, add_labels, build_label_bank, classify_many
from .config import ExperimentConfig, derive_seed
from .data import (
    IMUWindow,
    SplitSpec,
    WindowCorpus,
    load_alias_table,
    load_dataset,
    split_source,
    windows_from_streams,
)
from .errors import ArgumentError, DependencyError, FingerprintMismatchError
from .filtering import FilterConfig, run_filter
from .interpret import (
    DecodeParams,
    ResponseCache,
    SemanticInterpretation,
    build_label_prompt,
    build_regen_prompt,
    build_sensor_prompt,
    generate_interpretation,
    generate_many,
    make_backend,
)
from .metrics import evaluate_predictions, kl_report, kl_table_csv
from .sensor import Normalizer, SensorEncoderConfig, SensorModel, train_sensor_encoder
from .stats import WindowStats, compute_stats
from .text import (
    CategoryTable,
    TextDecoderConfig,
    TextEncoder,
    TextEncoderConfig,
    TrainConfig,
    encode_text,
    load_text_checkpoint,
    train_text_encoder,
)

log = logging.getLogger(__name__)

DEFAULT_KNOWLEDGE = (
    "Static postures keep the accelerometer close to gravity with very small fluctuations and "
    "little gyroscope activity.",
    "Walking produces periodic acceleration at roughly 1.5 to 2.2 steps per second with moderate "
    "amplitude.",
    "Running and jogging produce larger accelerations at a faster cadence than walking.",
    "Stair climbing is periodic like walking but usually slower, with a vertical component.",
)


class CountingBackend:
    """Wraps a backend and counts calls that actually reach it."""

    def __init__(self, inner):
        self.inner = inner
        self.backend_id = inner.backend_id
        self.calls = 0
        self._lock = threading.Lock()

    def generate(self, prompt, params):
        with self._lock:
            self.calls += 1
        return self.inner.generate(prompt, params)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    with os.fdopen(fd, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _read_json(path: Path, hint: str):
    if not path.exists():
        raise DependencyError(str(path), hint)
    return json.loads(path.read_text())


class Pipeline:
    def __init__(self, config: ExperimentConfig, base_dir: str | Path | None = None,
                 run_dir: str | Path | None = None, cache_dir: str | Path | None = None):
        self.config = config
        self.fingerprint = config.fingerprint
        self.base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
        if run_dir is None:
            run_dir = self._resolve(config.run_root) / self.fingerprint
        self.run_dir = Path(run_dir)
        if cache_dir is None:
            cache_dir = (self._resolve(config.backend.cache_dir) if config.backend.cache_dir
                         else self.run_dir / "cache")
        self.cache = ResponseCache(cache_dir)
        self._backend: CountingBackend | None = None
        self.categories = CategoryTable(config.categories)

    # -- paths / helpers -----------------------------------------------------

    def _resolve(self, p: str | Path) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def path(self, *parts: str) -> Path:
        return self.run_dir.joinpath(*parts)

    def seed(self, name: str) -> int:
        return derive_seed(self.config.seed, name)

    @property
    def backend(self) -> CountingBackend:
        if self._backend is None:
            b = self.config.backend
            inner = make_backend(b.kind, hallucination_rate=b.hallucination_rate,
                                 seed=self.seed("backend"), endpoint=b.endpoint, model=b.model,
                                 api_key_env=b.api_key_env, timeout_s=b.timeout_s,
                                 replay_dir=str(self._resolve(b.replay_dir)) if b.replay_dir else None)
            self._backend = CountingBackend(inner)
        return self._backend

    @property
    def decode_params(self) -> DecodeParams:
        return DecodeParams(temperature=self.config.backend.temperature,
                            max_tokens=self.config.backend.max_tokens)

    def _gen_kwargs(self) -> dict:
        b = self.config.backend
        return {"max_retries": b.max_retries, "backoff_s": b.backoff_s}

    def _meta(self, **extra) -> dict:
        return {"fingerprint": self.fingerprint, **extra}

    # -- stage: ingest -----------------------------------------------------------

    def ingest(self) -> dict:
        cfg = self.config
        if not cfg.datasets:
            raise ArgumentError("no datasets configured")
        aliases = load_alias_table(self._resolve(cfg.preprocess.aliases_file)) \
            if cfg.preprocess.aliases_file else None
        pp = cfg.preprocess
        windows: list[IMUWindow] = []
        roles: list[str] = []
        summary = {}
        for i, ds in enumerate(cfg.datasets):
            streams = load_dataset(self._resolve(ds.path), ds.format, aliases, rate_hz=ds.rate_hz)
            wins = windows_from_streams(streams, pp.rate_hz, pp.window_len, pp.stride)
            if not wins:
                raise ArgumentError(f"dataset {ds.name!r} yields no windows of length {pp.window_len}")
            if ds.role == "source":
                train, val = split_source(wins, SplitSpec(pp.train_fraction, self.seed(f"split:{i}")))
                tags = {w.window_id: "train" for w in train} | {w.window_id: "val" for w in val}
                roles.extend(tags[w.window_id] for w in wins)
            else:
                roles.extend("target" for _ in wins)
            windows.extend(wins)
            summary[ds.name] = {"role": ds.role, "windows": len(wins),
                                "dataset_ids": sorted({w.dataset_id for w in wins}),
                                "labels": sorted({w.label for w in wins if w.label})}
        WindowCorpus(windows, roles).save(self.path("data", "windows"))
        out = self._meta(datasets=summary)
        _write_json(self.path("data", "ingest.json"), out)
        return out

    def corpus(self) -> WindowCorpus:
        if not self.path("data", "windows.json").exists():
            self.ingest()
        return WindowCorpus.load(self.path("data", "windows"))

    def ingest_summary(self) -> dict:
        if not self.path("data", "ingest.json").exists():
            self.ingest()
        return json.loads(self.path("data", "ingest.json").read_text())

    # -- stage: analyze --------------------------------------------------------

    def analyze(self) -> dict[str, WindowStats]:
        corpus = self.corpus()
        stats = {w.window_id: compute_stats(w) for w in corpus.windows}
        _write_json(self.path("data", "stats.json"),
                    self._meta(stats={k: v.to_dict() for k, v in stats.items()}))
        return stats

    def stats(self) -> dict[str, WindowStats]:
        p = self.path("data", "stats.json")
        if not p.exists():
            return self.analyze()
        return {k: WindowStats.from_dict(v) for k, v in json.loads(p.read_text())["stats"].items()}

    # -- stage: interpret ------------------------------------------------------

    def knowledge(self) -> tuple[str, ...]:
        kf = self.config.interpret.knowledge_file
        if not kf:
            return DEFAULT_KNOWLEDGE
        lines = self._resolve(kf).read_text().splitlines()
        return tuple(ln.strip() for ln in lines if ln.strip() and not ln.startswith("#"))

    def train_activities(self) -> list[str] | None:
        ev = self.config.eval
        if ev.train_activities is not None:
            return list(ev.train_activities)
        if ev.protocol == "new_activity":
            return list(ev.common_activities)
        return None

    def all_labels(self) -> list[str]:
        labels = {w.label for w in self.corpus().windows if w.label}
        labels |= set(self.config.eval.candidate_labels or [])
        return sorted(labels)

    def interpret(self) -> dict:
        corpus = self.corpus()
        stats = self.stats()
        know = self.knowledge()
        b = self.config.backend
        bundles = [build_sensor_prompt(w, stats[w.window_id], list(know)) for w in corpus.windows]
        calls_before = self.backend.calls
        sensor = generate_many(bundles, self.backend, self.cache, self.decode_params,
                               concurrency=b.concurrency, **self._gen_kwargs())
        label_bundles = [build_label_prompt(lab, v) for lab in self.all_labels()
                         for v in range(self.config.interpret.label_variants)]
        labels = generate_many(label_bundles, self.backend, self.cache, self.decode_params,
                               concurrency=b.concurrency, **self._gen_kwargs())
        _write_json(self.path("interpretations", "sensor.json"),
                    self._meta(records=[s.to_dict() for s in sensor]))
        _write_json(self.path("interpretations", "labels.json"),
                    self._meta(records=[s.to_dict() for s in labels]))
        usage = {"backend_calls": self.backend.calls - calls_before,
                 "cache_hits": sum(s.cached for s in sensor + labels),
                 "requests": len(sensor) + len(labels)}
        _write_json(self.path("interpretations", "usage.json"), self._meta(**usage))
        return usage

    def _load_interps(self, name: str, hint: str) -> dict[str, SemanticInterpretation]:
        data = _read_json(self.path("interpretations", name), hint)
        return {r["target_id"]: SemanticInterpretation.from_dict(r) for r in data["records"]}

    def sensor_interpretations(self, filtered: bool | None = None) -> dict[str, SemanticInterpretation]:
        if filtered is None:
            filtered = self.config.filter.enabled
        if filtered:
            return self._load_interps("sensor_filtered.json", "lanhar filter")
        return self._load_interps("sensor.json", "lanhar interpret")

    def label_descriptions(self) -> dict[str, list[str]]:
        recs = self._load_interps("labels.json", "lanhar interpret")
        out: dict[str, list[str]] = {}
        for tid in sorted(recs, key=lambda t: (t.split("#")[0], int(t.split("#")[1]))):
            out.setdefault(tid.split("#")[0], []).append(recs[tid].text)
        return out

    # -- stage: filter ---------------------------------------------------------

    def initial_text_encoder(self) -> TextEncoder:
        t = self.config.text
        torch.manual_seed(self.seed("text-init"))
        return TextEncoder(TextEncoderConfig(d=t.d, layers=t.layers, heads=t.heads, ff_mult=t.ff_mult,
                                             vocab_size=t.vocab_size, max_len=t.max_len,
                                             dropout=t.dropout,
                                             pretrained=str(self._resolve(t.pretrained))
                                             if t.pretrained else None))

    def filter(self) -> dict:
        interps = self.sensor_interpretations(filtered=False)
        corpus = self.corpus()
        stats = self.stats()
        know = list(self.knowledge())
        fs = self.config.filter
        allowed = self.train_activities()
        by_id = {w.window_id: w for w in corpus.windows}
        grouped: dict[str, dict[str, SemanticInterpretation]] = {}
        for w in corpus.select("train", "val"):
            if w.label and (allowed is None or w.label in allowed):
                grouped.setdefault(w.label, {})[w.window_id] = interps[w.window_id]

        encoder = self.initial_text_encoder()
        memo: dict[str, np.ndarray] = {}

        def embed(text: str) -> np.ndarray:
            if text not in memo:
                memo[text] = encode_text(encoder, [text])[0]
            return memo[text]

        def regen(iid: str, current: SemanticInterpretation) -> SemanticInterpretation:
            w = by_id[iid]
            original = dataclasses.replace(build_sensor_prompt(w, stats[iid], know),
                                           attempt=current.attempt)
            bundle = build_regen_prompt(original, current.text)
            return generate_interpretation(bundle, self.backend, self.cache, self.decode_params,
                                           **self._gen_kwargs())

        fcfg = FilterConfig(k=fs.k, max_iterations=fs.max_iterations, patience=fs.patience,
                            min_rel_improvement=fs.min_rel_improvement, seed=self.seed("filter"),
                            concurrency=self.config.backend.concurrency)
        filtered, report = run_filter(grouped, fcfg, regen, embed)
        merged = dict(interps)
        for texts in filtered.values():
            merged.update(texts)
        _write_json(self.path("interpretations", "sensor_filtered.json"),
                    self._meta(records=[merged[w.window_id].to_dict() for w in corpus.windows]))
        _write_json(self.path("reports", "filter_report.json"), self._meta(**report))
        return report

    # -- stage: train-text -----------------------------------------------------

    def text_train_config(self) -> TrainConfig:
        return TrainConfig(**self.config.text.train.model_dump(), seed=self.seed("text-train"))

    def train_text(self) -> dict:
        interps = self.sensor_interpretations()
        descriptions = self.label_descriptions()
        corpus = self.corpus()
        allowed = self.train_activities()

        def pairs_for(role: str):
            out = []
            for w in corpus.select(role):
                if w.label and (allowed is None or w.label in allowed):
                    out.append((interps[w.window_id].text, descriptions[w.label][0], w.label))
            return out

        train, val = pairs_for("train"), pairs_for("val")
        if not train:
            raise ArgumentError("no labelled source training windows for stage 1")
        labels = sorted({p[2] for p in train})
        t = self.config.text
        encoder, history = train_text_encoder(
            train, self.text_train_config(), self.categories, self.initial_text_encoder(),
            label_variants={lab: descriptions[lab] for lab in labels},
            val_pairs=val or None,
            decoder_config=TextDecoderConfig(d=t.decoder_d, layers=t.decoder_layers,
                                             heads=t.decoder_heads, dropout=t.dropout),
            checkpoint_dir=self.path("checkpoints", "text"),
            metrics_path=self.path("reports", "text_metrics.jsonl"),
            extra_meta={"fingerprint": self.fingerprint, "train_labels": labels})
        return {"history": history, "train_labels": labels}

    def text_encoder(self) -> tuple[TextEncoder, dict]:
        ckpt = self.path("checkpoints", "text")
        if not (ckpt / "checkpoint.json").exists():
            raise DependencyError(str(ckpt / "checkpoint.json"), "lanhar train-text")
        enc, _, meta = load_text_checkpoint(ckpt)
        return enc, meta

    # -- stage: train-sensor ---------------------------------------------------

    def sensor_split(self) -> tuple[list[IMUWindow], list[IMUWindow]]:
        """Stage-2 (train, val) windows.

        Validation uses the source val split plus, when target windows join
        training, a seeded label-blind slice of them; retrieval needs no labels.
        """
        corpus = self.corpus()
        train, val = corpus.select("train"), corpus.select("val")
        if self.config.sensor.corpus == "source_and_target":
            target = corpus.select("target")
            rng = np.random.default_rng(self.seed("sensor-val"))
            n_val = int(round((1 - self.config.preprocess.train_fraction) * len(target)))
            held = set(rng.permutation(len(target))[:n_val].tolist())
            train = train + [w for i, w in enumerate(target) if i not in held]
            val = val + [w for i, w in enumerate(target) if i in held]
        return train, val

    def train_sensor(self) -> dict:
        encoder, meta = self.text_encoder()
        interps = self.sensor_interpretations()
        corpus = self.corpus()
        s = self.config.sensor
        wins, val_w = self.sensor_split()
        normalizer = Normalizer().fit(corpus.select("train"))

        def xz(ws):
            X = np.stack([normalizer.transform(w) for w in ws])
            Z = encode_text(encoder, [interps[w.window_id].text for w in ws])
            return X, Z

        X, Z = xz(wins)
        val = xz(val_w) if val_w else None
        ecfg = SensorEncoderConfig(window_len=self.config.preprocess.window_len, d_model=s.d_model,
                                   layers=s.layers, heads=s.heads, ff_mult=s.ff_mult, dropout=s.dropout,
                                   out_dim=encoder.dim)
        tcfg = TrainConfig(**s.train.model_dump(), seed=self.seed("sensor-train"))
        torch.manual_seed(self.seed("sensor-init"))
        model, history = train_sensor_encoder(X, Z, tcfg, ecfg, val=val,
                                              metrics_path=self.path("reports", "sensor_metrics.jsonl"),
                                              select=s.select)
        artifact = SensorModel(model, normalizer, self.config.preprocess.rate_hz, meta["checkpoint_id"])
        artifact_id = artifact.save(self.path("checkpoints", "sensor"))
        _write_json(self.path("checkpoints", "sensor", "training.json"),
                    self._meta(artifact_id=artifact_id, history=history, n_windows=len(wins)))
        return {"artifact_id": artifact_id, "history": history}

    def sensor_model(self) -> SensorModel:
        d = self.path("checkpoints", "sensor")
        if not (d / "manifest.json").exists():
            raise DependencyError(str(d / "manifest.json"), "lanhar train-sensor")
        return SensorModel.load(d)

    # -- stage: build-bank -----------------------------------------------------

    def bank_labels(self) -> tuple[list[str], list[str]]:
        """(bank labels seen in stage-1 training, bank labels added by description only)."""
        _, meta = self.text_encoder()
        base = set(meta.get("train_labels") or [])
        if self.config.eval.candidate_labels:
            wanted = set(self.config.eval.candidate_labels)
        else:
            wanted = base | {w.label for w in self.eval_windows() if w.label}
        return sorted(base & wanted), sorted(wanted - base)

    def build_bank(self) -> LabelBank:
        encoder, meta = self.text_encoder()
        descriptions = self.label_descriptions()
        base, new = self.bank_labels()
        missing = sorted(set(base + new) - set(descriptions))
        if missing:
            raise DependencyError(f"label interpretations for {missing}", "lanhar interpret")
        mode = self.config.eval.bank_mode
        if mode == "new_only" and new:
            bank = build_label_bank({lab: descriptions[lab] for lab in new}, encoder, self.categories,
                                    meta["checkpoint_id"])
        else:
            first, rest = (base, new) if base else (new, [])
            bank = build_label_bank({lab: descriptions[lab] for lab in first}, encoder,
                                    self.categories, meta["checkpoint_id"])
            if rest:
                bank = add_labels(bank, {lab: descriptions[lab] for lab in rest}, encoder,
                                  self.categories)
        bank.save(self.path("banks", "bank"))
        return bank

    def bank(self) -> LabelBank:
        model = self.sensor_model()
        if not self.path("banks", "bank.json").exists():
            return self.build_bank()
        return LabelBank.load(self.path("banks", "bank"), expected_provenance=model.text_checkpoint_id)

    # -- stage: infer / evaluate -----------------------------------------------

    def eval_windows(self) -> list[IMUWindow]:
        corpus = self.corpus()
        return corpus.select("target") or corpus.select("val")

    def infer(self) -> list[dict]:
        model = self.sensor_model()
        bank = self.bank()
        wins = self.eval_windows()
        preds = classify_many(wins, model, bank, self.config.eval.min_similarity)
        records = [{"window_id": w.window_id, "dataset_id": w.dataset_id, "gold": w.label,
                    "pred": p.label, "score": round(p.score, 10),
                    "scores": {k: round(v, 10) for k, v in sorted(p.scores.items())}}
                   for w, p in zip(wins, preds)]
        _write_json(self.path("reports", "predictions.json"),
                    self._meta(bank_labels=bank.labels, records=records))
        return records

    def _setting(self) -> tuple[str, str]:
        summary = self.ingest_summary()["datasets"]
        src = [n for n, d in summary.items() if d["role"] == "source"]
        tgt = [n for n, d in summary.items() if d["role"] == "target"]
        return "+".join(src) or "-", "+".join(tgt) or "+".join(src)

    def evaluate(self) -> dict:
        if not self.path("banks", "bank.json").exists():
            self.build_bank()
        records = self.infer()
        bank = self.bank()
        ev = self.config.eval
        labelled = [r for r in records if r["gold"]]
        status, warning = "ok", None
        if ev.protocol == "new_activity":
            _, new = self.bank_labels()
            labelled = [r for r in labelled if r["gold"] in new]
            if not labelled:
                status, warning = "skipped", "target has no windows of activities outside training"
        src, tgt = self._setting()
        out = self._meta(setting=f"{src}->{tgt}", protocol=ev.protocol, status=status)
        if warning:
            log.warning(warning)
            out["warning"] = warning
        if labelled:
            cats = dict(self.categories)
            cats.setdefault("unknown", 0)
            rep = evaluate_predictions([r["pred"] for r in labelled], [r["gold"] for r in labelled],
                                       cats, setting=f"{src}->{tgt}", source=src, target=tgt,
                                       fingerprint=self.fingerprint)
            rep.extra = {"bank_labels": bank.labels, "protocol": ev.protocol}
            out["report"] = rep.to_dict()
        kl = self.kl_tables()
        if kl is not None:
            out["kl"] = kl
            (self.path("reports", "kl_table.csv")).write_text(kl_table_csv(kl))
        _write_json(self.path("reports", "eval.json"), out)
        self.path("reports", "eval.csv").write_text(_eval_csv(out))
        return out

    def kl_tables(self) -> dict | None:
        """KL between the first source and first target dataset, per activity."""
        summary = self.ingest_summary()["datasets"]
        src = [d for d in summary.values() if d["role"] == "source"]
        tgt = [d for d in summary.values() if d["role"] == "target"]
        if not src or not tgt or len(src[0]["dataset_ids"]) != 1 or len(tgt[0]["dataset_ids"]) != 1:
            return None
        pair = (src[0]["dataset_ids"][0], tgt[0]["dataset_ids"][0])
        corpus = self.corpus()
        wins = [w for w in corpus.windows if w.dataset_id in pair and w.label]
        encoder, _ = self.text_encoder()
        interps = self.sensor_interpretations()
        sem = encode_text(encoder, [interps[w.window_id].text for w in wins])
        return kl_report(wins, {"Semantic interpretations": sem}, pair)

    # -- stage: report ---------------------------------------------------------

    def report(self, force: bool = False) -> dict:
        """Aggregate every fingerprinted artifact of the run into reports/summary.json."""
        found = {}
        for p in sorted(self.run_dir.rglob("*.json")):
            if p.name == "summary.json" or "cache" in p.relative_to(self.run_dir).parts:
                continue
            try:
                obj = json.loads(p.read_text())
            except ValueError:
                continue
            if isinstance(obj, dict) and "fingerprint" in obj:
                found[str(p.relative_to(self.run_dir))] = obj["fingerprint"]
        bad = {k: v for k, v in found.items() if v != self.fingerprint}
        if bad and not force:
            raise FingerprintMismatchError(
                f"artifacts from other configs: {', '.join(f'{k}={v}' for k, v in sorted(bad.items()))}")
        summary = self._meta(artifacts=found, mismatched=sorted(bad))
        ev = self.path("reports", "eval.json")
        if ev.exists():
            e = json.loads(ev.read_text())
            summary["evaluation"] = {k: e["report"][k] for k in ("accuracy", "macro_f1",
                                                                 "category_accuracy", "n_windows")} \
                if "report" in e else {"status": e.get("status")}
        fr = self.path("reports", "filter_report.json")
        if fr.exists():
            f = json.loads(fr.read_text())
            summary["filter"] = {a: {"initial_kl": v["kl_history"][0], "final_kl": v["kl_history"][-1]}
                                 for a, v in f["activities"].items()}
        _write_json(self.path("reports", "summary.json"), summary)
        return summary

    # -- everything ------------------------------------------------------------

    STAGES = ("ingest", "analyze", "interpret", "filter", "train_text", "train_sensor", "build_bank",
              "infer", "evaluate")

    def run_all(self, stages: Iterable[str] | None = None) -> dict:
        out = {}
        for name in stages or self.STAGES:
            if name == "filter" and not self.config.filter.enabled:
                continue
            out[name] = getattr(self, name)()
        return out


def _eval_csv(out: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["setting", "protocol", "status", "n_windows", "accuracy", "macro_f1", "category_accuracy",
                "fingerprint"])
    r = out.get("report")
    w.writerow([out["setting"], out["protocol"], out["status"],
                r["n_windows"] if r else "", *(f"{r[k]:.6f}" if r else "" for k in
                                              ("accuracy", "macro_f1", "category_accuracy")),
                out["fingerprint"]])
    return buf.getvalue()

