"""Canonical ingestion, label harmonization, resampling, windowing and splits.

Every public HAR corpus is converted offline (see ``contrib/``) into one
canonical row format::

    dataset_id, subject_id, timestamp_s, ax, ay, az, gx, gy, gz[, label]

with accelerometer channels in m/s^2 and gyroscope channels in rad/s.
"""

from __future__ import annotations

import csv
import json
import math
from collections import OrderedDict, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ArgumentError, LabelError, LoadError, ParseError, UnsupportedUpsampleError

CHANNELS = ("ax", "ay", "az", "gx", "gy", "gz")
CANONICAL_LABELS = (
    "walking",
    "sitting",
    "standing",
    "lying",
    "going_upstairs",
    "going_downstairs",
    "jogging",
    "biking",
)
COMMON_ACTIVITIES = ("walking", "going_upstairs", "going_downstairs", "sitting")
DEFAULT_RATE_HZ = 20.0
FORMATS = ("canonical_csv", "canonical_jsonl")

# Raw label spellings seen in the four public corpora. "*" applies to every dataset.
DEFAULT_ALIASES: dict[str, dict[str, str]] = {
    "*": {
        "walk": "walking",
        "sit": "sitting",
        "stand": "standing",
        "lie": "lying",
        "laying": "lying",
        "lying_down": "lying",
        "upstairs": "going_upstairs",
        "downstairs": "going_downstairs",
        "walking_upstairs": "going_upstairs",
        "walking_downstairs": "going_downstairs",
        "stairs_up": "going_upstairs",
        "stairs_down": "going_downstairs",
        "jog": "jogging",
        "run": "jogging",
        "running": "jogging",
        "bike": "biking",
        "cycling": "biking",
    },
    "hhar": {"stairsup": "going_upstairs", "stairsdown": "going_downstairs"},
    "uci": {"walking_upstairs": "going_upstairs", "walking_downstairs": "going_downstairs", "laying": "lying"},
    "motion": {"ups": "going_upstairs", "dws": "going_downstairs", "wlk": "walking", "sit": "sitting",
               "std": "standing", "jog": "jogging"},
    "shoaib": {"upstairs": "going_upstairs", "downstairs": "going_downstairs"},
}


@dataclass
class SensorStream:
    samples: np.ndarray  # (n, 6)
    rate_hz: float
    subject_id: str
    dataset_id: str
    label: str | None = None
    segment: int = 0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[1] != 6:
            raise ArgumentError(f"stream samples must have shape (n, 6), got {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ArgumentError("stream contains non-finite samples")
        if not self.rate_hz > 0:
            raise ArgumentError(f"rate_hz must be positive, got {self.rate_hz}")

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass
class IMUWindow:
    data: np.ndarray  # (window_len, 6)
    window_id: str
    subject_id: str = ""
    dataset_id: str = ""
    label: str | None = None
    rate_hz: float = DEFAULT_RATE_HZ

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[1] != 6:
            raise ArgumentError(f"window data must have shape (L, 6), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ArgumentError(f"window {self.window_id} contains non-finite values")

    @property
    def window_len(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction <= 1.0:
            raise ArgumentError(f"train_fraction must lie in (0, 1], got {self.train_fraction}")


# -- labels ------------------------------------------------------------------


def _norm_label(raw: str) -> str:
    return "_".join(raw.strip().lower().replace("-", " ").split())


def load_alias_table(path: str | Path) -> dict[str, dict[str, str]]:
    """Read a ``{dataset_id: {raw: canonical}}`` table from JSON or TOML."""
    path = Path(path)
    if not path.exists():
        raise LoadError(f"alias table not found: {path}")
    if path.suffix == ".toml":
        from .config import toml_loads

        table = toml_loads(path.read_text())
    else:
        table = json.loads(path.read_text())
    out: dict[str, dict[str, str]] = {}
    for ds, mapping in table.items():
        for raw, canon in mapping.items():
            if canon not in CANONICAL_LABELS:
                raise LabelError(canon, f"alias table maps {raw!r} to non-canonical {canon!r}")
            out.setdefault(ds.lower(), {})[_norm_label(raw)] = canon
    return out


def merge_aliases(*tables: Mapping[str, Mapping[str, str]]) -> dict[str, dict[str, str]]:
    merged: dict[str, dict[str, str]] = {}
    for table in tables:
        for ds, mapping in table.items():
            merged.setdefault(ds, {}).update(mapping)
    return merged


def harmonize_label(raw: str, dataset_id: str = "*",
                    aliases: Mapping[str, Mapping[str, str]] | None = None) -> str:
    """Map a raw dataset label onto the canonical activity vocabulary."""
    aliases = DEFAULT_ALIASES if aliases is None else aliases
    key = _norm_label(raw)
    if key in CANONICAL_LABELS:
        return key
    for table in (aliases.get(dataset_id.lower(), {}), aliases.get("*", {})):
        if key in table:
            return table[key]
    raise LabelError(raw)


# -- ingestion ---------------------------------------------------------------


def _iter_rows(path: Path, format_id: str) -> Iterable[tuple[int, dict]]:
    if format_id == "canonical_csv":
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                return
            missing = [c for c in ("dataset_id", "subject_id", "timestamp_s", *CHANNELS) if c not in header]
            if missing:
                raise ParseError(f"header is missing columns {missing}", line=1)
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not cell.strip() for cell in row):
                    continue
                if len(row) != len(header):
                    raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
                yield lineno, dict(zip(header, row))
    elif format_id == "canonical_jsonl":
        with path.open() as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from None
                if not isinstance(rec, dict):
                    raise ParseError("record is not an object", line=lineno)
                yield lineno, rec
    else:
        raise ArgumentError(f"unsupported format {format_id!r}; expected one of {FORMATS}")


def _parse_row(lineno: int, rec: dict) -> tuple[str, str, float, list[float], str]:
    try:
        ds = str(rec["dataset_id"]).strip()
        subj = str(rec["subject_id"]).strip()
        ts = float(rec["timestamp_s"])
        vals = [float(rec[c]) for c in CHANNELS]
    except KeyError as exc:
        raise ParseError(f"missing field {exc.args[0]!r}", line=lineno) from None
    except (TypeError, ValueError) as exc:
        raise ParseError(f"non-numeric value ({exc})", line=lineno) from None
    if not all(math.isfinite(v) for v in vals) or not math.isfinite(ts):
        raise ParseError("non-finite value", line=lineno)
    label = rec.get("label")
    label = "" if label is None else str(label).strip()
    return ds, subj, ts, vals, label


def _infer_rate(ts: Sequence[float], line: int) -> float:
    if len(ts) < 2:
        raise ParseError("cannot infer sampling rate from a single sample; pass rate_hz", line=line)
    dt = float(np.median(np.diff(ts)))
    if dt <= 0:
        raise ParseError("timestamps do not advance", line=line)
    return round(1.0 / dt, 6)


def load_dataset(path: str | Path, format_id: str = "canonical_csv",
                 aliases: Mapping[str, Mapping[str, str]] | None = None,
                 rate_hz: float | None = None) -> list[SensorStream]:
    """Read a canonical CSV/JSONL file into streams.

    Rows are grouped into contiguous runs sharing (dataset_id, subject_id,
    label); a subject recorded under one label yields one stream.
    """
    path = Path(path)
    if not path.exists():
        raise LoadError(f"dataset file not found: {path}")
    if format_id not in FORMATS:
        raise ArgumentError(f"unsupported format {format_id!r}; expected one of {FORMATS}")

    runs: list[dict] = []
    open_run: dict[tuple, dict] = {}
    segments: dict[tuple[str, str], int] = defaultdict(int)
    for lineno, rec in _iter_rows(path, format_id):
        ds, subj, ts, vals, raw_label = _parse_row(lineno, rec)
        label = harmonize_label(raw_label, ds, aliases) if raw_label else None
        key = (ds, subj)
        run = open_run.get(key)
        if run is None or run["label"] != label:
            run = {"ds": ds, "subj": subj, "label": label, "ts": [], "rows": [],
                   "segment": segments[key], "first_line": lineno}
            segments[key] += 1
            open_run[key] = run
            runs.append(run)
        if run["ts"] and ts <= run["ts"][-1]:
            raise ParseError("timestamps must be strictly increasing within a subject", line=lineno)
        run["ts"].append(ts)
        run["rows"].append(vals)

    streams = []
    for run in runs:
        rate = rate_hz if rate_hz is not None else _infer_rate(run["ts"], run["first_line"])
        streams.append(SensorStream(samples=np.asarray(run["rows"]), rate_hz=rate,
                                    subject_id=run["subj"], dataset_id=run["ds"],
                                    label=run["label"], segment=run["segment"]))
    return streams


def write_canonical_csv(path: str | Path, streams: Sequence[SensorStream]) -> None:
    """Inverse of :func:`load_dataset` for ``canonical_csv``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dataset_id", "subject_id", "timestamp_s", *CHANNELS, "label"])
        offsets: dict[tuple[str, str], float] = defaultdict(float)
        for s in streams:
            key = (s.dataset_id, s.subject_id)
            t0 = offsets[key]
            for i, row in enumerate(s.samples):
                w.writerow([s.dataset_id, s.subject_id, f"{t0 + i / s.rate_hz:.6f}",
                            *(repr(float(v)) for v in row), s.label or ""])
            offsets[key] = t0 + len(s) / s.rate_hz + 1.0


# -- resampling / windowing ---------------------------------------------------


def resample(stream: SensorStream, target_hz: float = DEFAULT_RATE_HZ) -> SensorStream:
    """Downsample by linear interpolation onto a uniform grid starting at t=0."""
    if target_hz <= 0:
        raise ArgumentError("target_hz must be positive")
    if target_hz > stream.rate_hz:
        raise UnsupportedUpsampleError(
            f"cannot upsample {stream.rate_hz} Hz stream to {target_hz} Hz")
    if math.isclose(target_hz, stream.rate_hz):
        return replace(stream, samples=stream.samples.copy(), rate_hz=float(target_hz))
    n_in = len(stream)
    duration = (n_in - 1) / stream.rate_hz
    n_out = int(math.floor(duration * target_hz + 1e-9)) + 1
    t_in = np.arange(n_in) / stream.rate_hz
    t_out = np.arange(n_out) / target_hz
    out = np.empty((n_out, 6))
    for c in range(6):
        out[:, c] = np.interp(t_out, t_in, stream.samples[:, c])
    return replace(stream, samples=out, rate_hz=float(target_hz))


def make_windows(stream: SensorStream, window_len: int = 120, stride: int = 60) -> list[IMUWindow]:
    if window_len < 1 or stride < 1:
        raise ArgumentError("window_len and stride must be >= 1")
    n = len(stream)
    if n < window_len:
        return []
    windows = []
    for start in range(0, n - window_len + 1, stride):
        windows.append(IMUWindow(
            data=stream.samples[start:start + window_len].copy(),
            window_id=f"{stream.dataset_id}:{stream.subject_id}:{stream.segment}:{start}",
            subject_id=stream.subject_id,
            dataset_id=stream.dataset_id,
            label=stream.label,
            rate_hz=stream.rate_hz,
        ))
    return windows


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_source(windows: Sequence[IMUWindow], spec: SplitSpec = SplitSpec()
                 ) -> tuple[list[IMUWindow], list[IMUWindow]]:
    """Seeded train/val partition, stratified by label when labels are present.

    Per-label quotas use largest-remainder allocation so that the total train
    size is exactly round(train_fraction * N).
    """
    if not windows:
        raise ArgumentError("cannot split an empty window list")
    rng = np.random.default_rng(spec.seed)
    n_train = _round_half_up(spec.train_fraction * len(windows))

    strata: OrderedDict[str, list[int]] = OrderedDict()
    for i, w in enumerate(windows):
        strata.setdefault(w.label or "", []).append(i)
    keys = sorted(strata)
    exact = {k: spec.train_fraction * len(strata[k]) for k in keys}
    quota = {k: int(math.floor(exact[k])) for k in keys}
    leftover = n_train - sum(quota.values())
    by_remainder = sorted(keys, key=lambda k: (-(exact[k] - quota[k]), k))
    for k in by_remainder[:leftover]:
        quota[k] += 1

    train_idx, val_idx = [], []
    for k in keys:
        idx = np.array(strata[k])
        perm = idx[rng.permutation(len(idx))]
        train_idx.extend(perm[:quota[k]].tolist())
        val_idx.extend(perm[quota[k]:].tolist())
    return [windows[i] for i in sorted(train_idx)], [windows[i] for i in sorted(val_idx)]


def windows_from_streams(streams: Iterable[SensorStream], target_hz: float = DEFAULT_RATE_HZ,
                         window_len: int = 120, stride: int = 60) -> list[IMUWindow]:
    out: list[IMUWindow] = []
    for s in streams:
        out.extend(make_windows(resample(s, target_hz), window_len, stride))
    return out


# -- corpus persistence --------------------------------------------------------


@dataclass
class WindowCorpus:
    """Windows plus a role tag per window ("train", "val" or "target")."""

    windows: list[IMUWindow]
    roles: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.roles:
            self.roles = ["target"] * len(self.windows)
        if len(self.roles) != len(self.windows):
            raise ArgumentError("roles and windows differ in length")
        ids = [w.window_id for w in self.windows]
        if len(set(ids)) != len(ids):
            raise ArgumentError("window ids must be unique within a corpus")

    def select(self, *roles: str, dataset_id: str | None = None) -> list[IMUWindow]:
        return [w for w, r in zip(self.windows, self.roles)
                if r in roles and (dataset_id is None or w.dataset_id == dataset_id)]

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        arr = np.stack([w.data for w in self.windows]) if self.windows else np.zeros((0, 0, 6))
        with open(path.with_suffix(".npy"), "wb") as fh:
            np.save(fh, arr)
        meta = [{"window_id": w.window_id, "subject_id": w.subject_id, "dataset_id": w.dataset_id,
                 "label": w.label, "rate_hz": w.rate_hz, "role": r}
                for w, r in zip(self.windows, self.roles)]
        path.with_suffix(".json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "WindowCorpus":
        path = Path(path)
        if not path.with_suffix(".json").exists():
            raise LoadError(f"window corpus not found: {path.with_suffix('.json')}")
        meta = json.loads(path.with_suffix(".json").read_text())
        arr = np.load(path.with_suffix(".npy"))
        windows = [IMUWindow(data=arr[i], window_id=m["window_id"], subject_id=m["subject_id"],
                             dataset_id=m["dataset_id"], label=m["label"], rate_hz=m["rate_hz"])
                   for i, m in enumerate(meta)]
        return cls(windows, [m["role"] for m in meta])
