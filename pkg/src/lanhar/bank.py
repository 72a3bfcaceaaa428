"""Label bank and similarity-based activity classification."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import IMUWindow
from .errors import ArgumentError, LoadError, UniquenessError
from .text.model import TextEncoder, encode_text
from .text.train import CategoryTable

BANK_VERSION = 1
UNKNOWN = "unknown"


@dataclass(frozen=True)
class BankEntry:
    label: str
    category: int | None
    descriptions: tuple[str, ...]
    embedding: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class LabelBank:
    entries: tuple[BankEntry, ...]
    provenance: str | None = None  # producing text-checkpoint id

    def __post_init__(self):
        if not self.entries:
            raise ArgumentError("label bank needs at least one entry")
        labels = [e.label for e in self.entries]
        dupes = sorted({lab for lab in labels if labels.count(lab) > 1})
        if dupes:
            raise UniquenessError(f"duplicate labels in bank: {dupes}")
        dims = {e.embedding.shape for e in self.entries}
        if len(dims) != 1:
            raise ArgumentError(f"bank embeddings differ in shape: {dims}")

    @property
    def labels(self) -> list[str]:
        return [e.label for e in self.entries]

    @property
    def matrix(self) -> np.ndarray:
        return np.stack([e.embedding for e in self.entries])

    def without(self, labels: Sequence[str]) -> "LabelBank":
        return LabelBank(tuple(e for e in self.entries if e.label not in set(labels)), self.provenance)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path.with_suffix(".npy"), "wb") as fh:
            np.save(fh, self.matrix.astype(np.float64))
        manifest = {
            "version": BANK_VERSION,
            "provenance": self.provenance,
            "dim": int(self.matrix.shape[1]),
            "entries": [{"label": e.label, "category": e.category, "descriptions": list(e.descriptions)}
                        for e in self.entries],
        }
        path.with_suffix(".json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path, expected_provenance: str | None = None) -> "LabelBank":
        path = Path(path)
        if not path.with_suffix(".json").exists():
            raise LoadError(f"label bank not found: {path.with_suffix('.json')}")
        manifest = json.loads(path.with_suffix(".json").read_text())
        if manifest.get("version") != BANK_VERSION:
            raise LoadError(f"unsupported bank version {manifest.get('version')}")
        if expected_provenance is not None and manifest["provenance"] != expected_provenance:
            raise LoadError(f"bank was built by text checkpoint {manifest['provenance']}, "
                            f"expected {expected_provenance}")
        mat = np.load(path.with_suffix(".npy"))
        entries = tuple(BankEntry(m["label"], m["category"], tuple(m["descriptions"]), mat[i])
                        for i, m in enumerate(manifest["entries"]))
        return cls(entries, manifest["provenance"])


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0:
        raise ArgumentError("zero-norm label embedding")
    return v / n


def _entries(descriptions: Mapping[str, Sequence[str]], encoder: TextEncoder,
             categories: CategoryTable | None) -> list[BankEntry]:
    out = []
    for label in descriptions:
        texts = list(descriptions[label])
        if not texts:
            raise ArgumentError(f"label {label!r} has no description")
        emb = encode_text(encoder, texts).mean(axis=0)
        cat = categories.get(label) if categories is not None else None
        out.append(BankEntry(label, cat, tuple(texts), _unit(emb)))
    return out


def build_label_bank(descriptions: Mapping[str, Sequence[str]], text_encoder: TextEncoder,
                     categories: CategoryTable | None = None, provenance: str | None = None) -> LabelBank:
    """One unit-norm embedding per label: the re-normalized mean over its descriptions."""
    return LabelBank(tuple(_entries(descriptions, text_encoder, categories)), provenance)


def add_labels(bank: LabelBank, descriptions: Mapping[str, Sequence[str]], text_encoder: TextEncoder,
               categories: CategoryTable | None = None) -> LabelBank:
    clash = sorted(set(descriptions) & set(bank.labels))
    if clash:
        raise UniquenessError(f"labels already in bank: {clash}")
    return LabelBank(bank.entries + tuple(_entries(descriptions, text_encoder, categories)),
                     bank.provenance)


@dataclass(frozen=True)
class Prediction:
    label: str
    score: float
    scores: dict[str, float]


def score_embeddings(E: np.ndarray, bank: LabelBank) -> np.ndarray:
    """Cosine similarity matrix (n_windows, n_labels)."""
    E = np.atleast_2d(np.asarray(E, dtype=np.float64))
    norms = np.linalg.norm(E, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ArgumentError("zero-norm window embedding")
    M = bank.matrix
    M = M / np.linalg.norm(M, axis=1, keepdims=True)
    return np.clip((E / norms) @ M.T, -1.0, 1.0)


def predict_from_embeddings(E: np.ndarray, bank: LabelBank, min_similarity: float | None = None
                            ) -> list[Prediction]:
    """Argmax over cosine scores; ties resolve to the lexicographically smallest label."""
    S = score_embeddings(E, bank)
    labels = bank.labels
    order = sorted(range(len(labels)), key=lambda j: labels[j])
    preds = []
    for row in S:
        best = max(order, key=lambda j: (row[j], -order.index(j)))
        label = labels[best]
        if min_similarity is not None and row[best] < min_similarity:
            label = UNKNOWN
        preds.append(Prediction(label, float(row[best]), {lab: float(v) for lab, v in zip(labels, row)}))
    return preds


def classify(window: IMUWindow, sensor_encoder, bank: LabelBank, min_similarity: float | None = None
             ) -> Prediction:
    """Predict the activity of one window; ``sensor_encoder`` is a :class:`SensorModel`."""
    return classify_many([window], sensor_encoder, bank, min_similarity)[0]


def classify_many(windows: Sequence[IMUWindow], sensor_encoder, bank: LabelBank,
                  min_similarity: float | None = None) -> list[Prediction]:
    if not windows:
        return []
    E = sensor_encoder.embed(windows)
    if E.shape[1] != bank.matrix.shape[1]:
        raise ArgumentError(f"sensor embedding dim {E.shape[1]} != bank dim {bank.matrix.shape[1]}")
    return predict_from_embeddings(E, bank, min_similarity)
