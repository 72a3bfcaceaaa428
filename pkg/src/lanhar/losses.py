"""Alignment, category-ranking, reconstruction and weighted-total losses."""

from __future__ import annotations

import itertools
import logging
import math
from typing import Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ArgumentError, NumericalError

log = logging.getLogger(__name__)


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ArgumentError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ArgumentError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(u / nu, v / nv), -1.0, 1.0))


def cosine_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return F.normalize(a, dim=-1) @ F.normalize(b, dim=-1).T


def symmetric_contrastive(a: torch.Tensor, b: torch.Tensor, tau: float) -> torch.Tensor:
    """Mean over pairs of the two-direction softmax cross-entropy on cosine / tau."""
    if tau <= 0:
        raise ArgumentError(f"tau must be positive, got {tau}")
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] < 1:
        raise ArgumentError(f"expected two (N, d) batches with N >= 1, got {tuple(a.shape)} "
                            f"and {tuple(b.shape)}")
    logits = cosine_matrix(a, b) / tau
    diag = torch.arange(a.shape[0])
    row = -torch.log_softmax(logits, dim=1)[diag, diag]
    col = -torch.log_softmax(logits, dim=0)[diag, diag]
    return (row + col).mean()


def loss_align(H: torch.Tensor, Z: torch.Tensor, tau: float) -> torch.Tensor:
    return symmetric_contrastive(H, Z, tau)


def loss_sensor(E: torch.Tensor, Z: torch.Tensor, tau: float) -> torch.Tensor:
    """Sensor-to-interpretation alignment; the interpretation targets stay frozen."""
    return symmetric_contrastive(E, Z.detach(), tau)


def pairwise_logistic(s_pos: torch.Tensor, s_neg: torch.Tensor) -> torch.Tensor:
    """Mean of -ln sigma(s_pos - s_neg)."""
    return F.softplus(-(s_pos - s_neg)).mean()


def _subsample(triples: list[tuple[int, int, int]], max_triples: int | None,
               generator: torch.Generator | None) -> torch.Tensor:
    t = torch.tensor(triples, dtype=torch.long)
    if max_triples is not None and len(triples) > max_triples:
        idx = torch.randperm(len(triples), generator=generator)[:max_triples]
        t = t[idx.sort().values]
    return t


def category_triples(categories: Sequence[int]) -> list[tuple[int, int, int]]:
    """All (i, j, k) with i != j in one category and k in another."""
    cats = list(categories)
    out = []
    for i, j in itertools.permutations(range(len(cats)), 2):
        if cats[i] != cats[j]:
            continue
        out.extend((i, j, k) for k in range(len(cats)) if cats[k] != cats[i])
    return out


def loss_pairwise_category(E: torch.Tensor, categories: Sequence[int], max_triples: int | None = 64,
                           generator: torch.Generator | None = None) -> torch.Tensor:
    """Same-category pairs should out-score cross-category pairs (cosine similarity)."""
    if len(categories) != E.shape[0]:
        raise ArgumentError("one category id per embedding row is required")
    triples = category_triples(categories)
    if len(set(categories)) < 2 or not triples:
        log.warning("category loss skipped: fewer than 2 categories or no valid triple in batch")
        return E.sum() * 0.0
    t = _subsample(triples, max_triples, generator)
    S = cosine_matrix(E, E)
    return pairwise_logistic(S[t[:, 0], t[:, 1]], S[t[:, 0], t[:, 2]])


def variant_triples(counts: Sequence[int]) -> list[tuple[tuple[int, int], tuple[int, int], tuple[int, int]]]:
    """All ((m, i), (m, j), (n, j')) with i != j variants of label m and n != m."""
    out = []
    for m, cm in enumerate(counts):
        for i, j in itertools.permutations(range(cm), 2):
            for n, cn in enumerate(counts):
                if n == m:
                    continue
                out.extend(((m, i), (m, j), (n, jj)) for jj in range(cn))
    return out


def loss_label_variants(variant_embeddings: Mapping[str, torch.Tensor], max_triples: int | None = 64,
                        generator: torch.Generator | None = None) -> torch.Tensor:
    """Descriptions of one label should be closer to each other than to other labels'."""
    labels = sorted(variant_embeddings)
    mats = [variant_embeddings[lab] for lab in labels]
    if len(labels) < 2 or not any(m.shape[0] >= 2 for m in mats):
        log.warning("label-variant loss skipped: need >= 2 labels and >= 2 variants of one label")
        ref = mats[0] if mats else torch.zeros(1)
        return ref.sum() * 0.0
    offsets = np.cumsum([0] + [m.shape[0] for m in mats])
    flat = torch.cat(mats, dim=0)
    triples = [(int(offsets[a[0]] + a[1]), int(offsets[b[0]] + b[1]), int(offsets[c[0]] + c[1]))
               for a, b, c in variant_triples([m.shape[0] for m in mats])]
    t = _subsample(triples, max_triples, generator)
    S = cosine_matrix(flat, flat)
    return pairwise_logistic(S[t[:, 0], t[:, 1]], S[t[:, 0], t[:, 2]])


def token_cross_entropy(log_probs: torch.Tensor, targets: torch.Tensor,
                        mask: torch.Tensor | None = None) -> torch.Tensor:
    """Per-sequence mean token cross-entropy, averaged over the batch.

    ``log_probs``: (N, T, V) log-probabilities; ``targets``: (N, T) ids;
    ``mask``: (N, T) with 1 for real tokens.
    """
    if mask is None:
        mask = torch.ones_like(targets, dtype=log_probs.dtype)
    mask = mask.to(log_probs.dtype)
    lengths = mask.sum(dim=1)
    if torch.any(lengths == 0):
        raise ArgumentError("empty reconstruction target")
    nll = -log_probs.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    nll = torch.where(mask > 0, nll, torch.zeros_like(nll))
    return (nll.sum(dim=1) / lengths).mean()


def loss_text_total(components: Mapping[str, float | torch.Tensor] | Sequence, alpha: float,
                    beta: float):
    """align + alpha * (ca1 + ca2 + ca3) + beta * re."""
    names = ("align", "ca1", "ca2", "ca3", "re")
    if not isinstance(components, Mapping):
        components = dict(zip(names, components))
    missing = [n for n in names if n not in components]
    if missing:
        raise ArgumentError(f"missing loss components {missing}")
    for n in names:
        v = components[n]
        val = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        if not math.isfinite(val):
            raise NumericalError(f"loss component {n} is not finite ({val})", component=n)
    c = components
    return c["align"] + alpha * (c["ca1"] + c["ca2"] + c["ca3"]) + beta * c["re"]
