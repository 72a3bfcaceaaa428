"""Classification metrics and per-activity KL tables."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import IMUWindow
from .errors import ArgumentError
from .kl import estimate_kl

log = logging.getLogger(__name__)


def _check_pair(preds: Sequence[str], golds: Sequence[str]) -> None:
    if len(preds) != len(golds):
        raise ArgumentError(f"{len(preds)} predictions vs {len(golds)} gold labels")
    if not golds:
        raise ArgumentError("metrics need at least one sample")


def accuracy(preds: Sequence[str], golds: Sequence[str]) -> float:
    _check_pair(preds, golds)
    return sum(p == g for p, g in zip(preds, golds)) / len(golds)


def macro_f1(preds: Sequence[str], golds: Sequence[str], labels: Sequence[str] | None = None) -> float:
    """Unweighted mean of per-class F1 over classes seen in golds or preds."""
    _check_pair(preds, golds)
    if labels is None:
        labels = sorted(set(golds) | set(preds))
    if not labels:
        raise ArgumentError("label set is empty")
    missing = sorted(set(golds) - set(labels))
    if missing:
        raise ArgumentError(f"label set does not cover gold labels {missing}")
    scores = []
    for c in labels:
        tp = sum(p == c and g == c for p, g in zip(preds, golds))
        fp = sum(p == c and g != c for p, g in zip(preds, golds))
        fn = sum(p != c and g == c for p, g in zip(preds, golds))
        if tp + fp + fn == 0:
            continue  # absent from both
        scores.append(2 * tp / (2 * tp + fp + fn))
    return float(np.mean(scores)) if scores else 0.0


def category_accuracy(preds: Sequence[str], golds: Sequence[str], categories: Mapping[str, int]) -> float:
    _check_pair(preds, golds)
    unknown = sorted({x for x in (*preds, *golds) if x not in categories})
    if unknown:
        raise ArgumentError(f"labels without a category: {unknown}")
    return sum(categories[p] == categories[g] for p, g in zip(preds, golds)) / len(golds)


def confusion_matrix(preds: Sequence[str], golds: Sequence[str], labels: Sequence[str] | None = None
                     ) -> tuple[list[str], np.ndarray]:
    """Rows are gold labels, columns predictions."""
    _check_pair(preds, golds)
    labels = list(labels) if labels is not None else sorted(set(golds) | set(preds))
    index = {lab: i for i, lab in enumerate(labels)}
    M = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for p, g in zip(preds, golds):
        if g not in index or p not in index:
            raise ArgumentError(f"label {g if g not in index else p!r} missing from label list")
        M[index[g], index[p]] += 1
    return labels, M


@dataclass
class EvalReport:
    setting: str
    source: str
    target: str
    n_windows: int
    accuracy: float
    macro_f1: float
    category_accuracy: float
    labels: list[str]
    confusion: list[list[int]]
    fingerprint: str
    kl_table: dict | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("accuracy", "macro_f1", "category_accuracy"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ArgumentError(f"{name} {v} outside [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_predictions(preds: Sequence[str], golds: Sequence[str], categories: Mapping[str, int],
                         setting: str, source: str, target: str, fingerprint: str,
                         labels: Sequence[str] | None = None) -> EvalReport:
    labs, M = confusion_matrix(preds, golds, labels)
    return EvalReport(setting=setting, source=source, target=target, n_windows=len(golds),
                      accuracy=accuracy(preds, golds), macro_f1=macro_f1(preds, golds),
                      category_accuracy=category_accuracy(preds, golds, categories),
                      labels=labs, confusion=M.tolist(), fingerprint=fingerprint)


# -- KL tables -------------------------------------------------------------------

RAW = "Raw data"


def kl_report(windows: Sequence[IMUWindow], representations: Mapping[str, np.ndarray],
              dataset_pair: tuple[str, str], activities: Sequence[str] | None = None,
              method: str = "gaussian") -> dict:
    """Per-activity KL(first dataset || second dataset) in each representation.

    The raw representation pools the 6-channel rows of every window as
    samples; each entry of ``representations`` holds one vector per window,
    row-aligned with ``windows``. Activities lacking two samples on either
    side are skipped with a warning.
    """
    ds_a, ds_b = dataset_pair
    for name, arr in representations.items():
        if len(arr) != len(windows):
            raise ArgumentError(f"representation {name!r} has {len(arr)} rows for {len(windows)} windows")
    present = sorted({w.label for w in windows if w.label is not None})
    activities = list(activities) if activities is not None else present
    columns = [RAW, *representations]
    rows, warnings = [], []
    for act in activities:
        ia = [i for i, w in enumerate(windows) if w.label == act and w.dataset_id == ds_a]
        ib = [i for i, w in enumerate(windows) if w.label == act and w.dataset_id == ds_b]
        if len(ia) < 2 or len(ib) < 2:
            msg = f"activity {act!r} skipped: {len(ia)} / {len(ib)} windows in {ds_a} / {ds_b}"
            log.warning(msg)
            warnings.append(msg)
            continue
        row = {"activity": act}
        row[RAW] = estimate_kl(np.concatenate([windows[i].data for i in ia]),
                               np.concatenate([windows[i].data for i in ib]), method=method)
        for name, arr in representations.items():
            arr = np.asarray(arr, dtype=np.float64)
            row[name] = estimate_kl(arr[ia], arr[ib], method=method)
        rows.append(row)
    average = {"activity": "Average"}
    for c in columns:
        average[c] = float(np.mean([r[c] for r in rows])) if rows else float("nan")
    return {"pair": [ds_a, ds_b], "columns": columns, "rows": rows, "average": average,
            "warnings": warnings}


def kl_table_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["Activity", *report["columns"]])
    for r in [*report["rows"], report["average"]]:
        w.writerow([r["activity"], *(f"{r[c]:.6f}" for c in report["columns"])])
    return buf.getvalue()


# -- cross-setting summary tables ------------------------------------------------


def setting_name(source: str, target: str) -> str:
    return f"{source}->{target}"


def summary_header(datasets: Sequence[str]) -> list[str]:
    pairs = [setting_name(s, t) for s in datasets for t in datasets if s != t]
    return ["Metric", *pairs, "Average"]


def summary_csv(datasets: Sequence[str], results: Mapping[str, Mapping[str, float] | None],
                metrics: Sequence[tuple[str, str]] = (("Accuracy", "accuracy"), ("F1", "macro_f1"))
                ) -> str:
    """One column per ordered pair plus an average; failed settings are blank."""
    header = summary_header(datasets)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for title, key in metrics:
        vals = []
        for name in header[1:-1]:
            r = results.get(name)
            vals.append(None if r is None else float(r[key]))
        ok = [v for v in vals if v is not None]
        avg = f"{np.mean(ok):.4f}" if ok else ""
        w.writerow([title, *("" if v is None else f"{v:.4f}" for v in vals), avg])
    return buf.getvalue()
