"""Stage 1: align sensor-reading and label interpretations in the text encoder."""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from ..errors import ArgumentError, NumericalError
from ..losses import loss_align, loss_label_variants, loss_pairwise_category, loss_text_total
from .model import (
    TextDecoder,
    TextDecoderConfig,
    TextEncoder,
    loss_reconstruction,
    save_text_checkpoint,
)

log = logging.getLogger(__name__)

DEFAULT_CATEGORIES: dict[str, int] = {
    "walking": 1, "jogging": 1, "biking": 1,
    "sitting": 2, "standing": 2, "lying": 2,
    "going_upstairs": 3, "going_downstairs": 3,
}


class CategoryTable(dict):
    """label -> category id in {1, 2, 3}."""

    def __init__(self, mapping: Mapping[str, int] | None = None):
        super().__init__(DEFAULT_CATEGORIES if mapping is None else mapping)

    def of(self, label: str) -> int:
        if label not in self:
            raise ArgumentError(f"label {label!r} has no category")
        return self[label]


@dataclass
class TrainConfig:
    tau: float = 0.07
    alpha: float = 0.1
    beta: float = 0.01
    lr: float = 1e-5
    weight_decay: float = 0.01
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    max_triples: int = 64
    grad_clip: float = 1.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ArgumentError("tau must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ArgumentError("alpha and beta must be non-negative")
        if self.batch_size < 2:
            raise ArgumentError("batch_size must be >= 2 for the contrastive terms")
        if self.epochs < 0:
            raise ArgumentError("epochs must be >= 0")


Pair = tuple[str, str, str]  # (sensor interpretation, label interpretation, label)


def _batches(n: int, size: int, gen: torch.Generator | None) -> list[list[int]]:
    order = torch.randperm(n, generator=gen).tolist() if gen is not None else list(range(n))
    return [order[i:i + size] for i in range(0, n, size)]


def _eval_align(encoder: TextEncoder, pairs: Sequence[Pair], cfg: TrainConfig) -> float:
    encoder.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for idx in _batches(len(pairs), cfg.batch_size, None):
            Z = encoder.embed([pairs[i][0] for i in idx])
            H = encoder.embed([pairs[i][1] for i in idx])
            total += float(loss_align(H, Z, cfg.tau)) * len(idx)
            count += len(idx)
    encoder.train()
    return total / max(count, 1)


def train_text_encoder(pairs: Sequence[Pair], config: TrainConfig, categories: CategoryTable,
                       encoder: TextEncoder, label_variants: Mapping[str, Sequence[str]] | None = None,
                       val_pairs: Sequence[Pair] | None = None,
                       decoder_config: TextDecoderConfig | None = None,
                       checkpoint_dir: str | Path | None = None,
                       metrics_path: str | Path | None = None,
                       extra_meta: dict | None = None) -> tuple[TextEncoder, list[dict]]:
    """Optimize align + alpha * (ca1 + ca2 + ca3) + beta * re with AdamW.

    With ``label_variants`` each pair draws one description of its label per
    epoch, and the variants feed the label-variant ranking term. The encoder
    holding the best validation alignment loss is returned (and written to
    ``checkpoint_dir`` when given).
    """
    if not pairs:
        raise ArgumentError("no training pairs")
    for lab in {p[2] for p in pairs}:
        categories.of(lab)
    torch.manual_seed(config.seed)
    gen = torch.Generator().manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)

    if label_variants is None:
        grouped: dict[str, list[str]] = {}
        for _, ltext, lab in pairs:
            if ltext not in grouped.setdefault(lab, []):
                grouped[lab].append(ltext)
        label_variants = grouped
    variants = {lab: list(v) for lab, v in label_variants.items()}

    decoder = TextDecoder(encoder.dim, encoder.tokenizer.vocab_size,
                          decoder_config or TextDecoderConfig(), encoder.config.max_len)
    params = list(encoder.parameters()) + list(decoder.parameters())
    opt = torch.optim.AdamW(params, lr=config.lr, weight_decay=config.weight_decay)

    val = list(val_pairs) if val_pairs else list(pairs)
    history: list[dict] = []
    best = _eval_align(encoder, val, config)
    best_state = copy.deepcopy(encoder.state_dict())
    history.append({"epoch": 0, "val_align": best})
    metrics_fh = None
    if metrics_path is not None:
        Path(metrics_path).parent.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(metrics_path, "w")
        metrics_fh.write(json.dumps(history[0], sort_keys=True) + "\n")
    if checkpoint_dir is not None:
        save_text_checkpoint(checkpoint_dir, encoder, decoder,
                             {"epoch": 0, "history": history, **(extra_meta or {})})

    encoder.train()
    decoder.train()
    try:
        for epoch in range(1, config.epochs + 1):
            sums = {k: 0.0 for k in ("align", "ca1", "ca2", "ca3", "re", "total")}
            n_batches = 0
            for idx in _batches(len(pairs), config.batch_size, gen):
                s_texts = [pairs[i][0] for i in idx]
                labs = [pairs[i][2] for i in idx]
                l_texts = [variants[lab][rng.integers(len(variants[lab]))] if variants.get(lab)
                           else pairs[i][1] for i, lab in zip(idx, labs)]
                cats = [categories.of(lab) for lab in labs]

                Z = encoder.embed(s_texts)
                uniq = sorted(set(l_texts))
                H_u = encoder.embed(uniq)
                H = H_u[torch.tensor([uniq.index(t) for t in l_texts])]

                comps = {"align": loss_align(H, Z, config.tau)}
                comps["ca1"] = loss_pairwise_category(H, cats, config.max_triples, gen)
                comps["ca2"] = loss_pairwise_category(Z, cats, config.max_triples, gen)
                batch_labels = sorted(set(labs))
                comps["ca3"] = loss_label_variants(
                    {lab: encoder.embed(variants[lab]) for lab in batch_labels if variants.get(lab)},
                    config.max_triples, gen) if len(batch_labels) >= 2 else Z.sum() * 0.0
                if config.beta > 0:
                    comps["re"] = (loss_reconstruction(decoder, Z, s_texts, encoder.tokenizer)
                                   + loss_reconstruction(decoder, H, l_texts, encoder.tokenizer))
                else:
                    comps["re"] = Z.sum() * 0.0
                total = loss_text_total(comps, config.alpha, config.beta)
                if not torch.isfinite(total):
                    raise NumericalError("total text loss is not finite", component="total")
                opt.zero_grad()
                total.backward()
                if config.grad_clip:
                    torch.nn.utils.clip_grad_norm_(params, config.grad_clip)
                opt.step()
                for k, v in comps.items():
                    sums[k] += float(v.detach())
                sums["total"] += float(total.detach())
                n_batches += 1
            rec = {"epoch": epoch, **{f"train_{k}": v / n_batches for k, v in sums.items()}}
            rec["val_align"] = _eval_align(encoder, val, config)
            history.append(rec)
            if metrics_fh:
                metrics_fh.write(json.dumps(rec, sort_keys=True) + "\n")
                metrics_fh.flush()
            if not math.isfinite(rec["val_align"]):
                raise NumericalError("validation alignment loss is not finite", component="align")
            if rec["val_align"] < best:
                best = rec["val_align"]
                best_state = copy.deepcopy(encoder.state_dict())
                if checkpoint_dir is not None:
                    save_text_checkpoint(checkpoint_dir, encoder, decoder,
                                         {"epoch": epoch, "history": history, **(extra_meta or {})})
    except NumericalError:
        # a non-finite loss is detected before the step, so current weights are usually finite
        if not all(torch.isfinite(p).all() for p in encoder.parameters()):
            encoder.load_state_dict(best_state)
        if checkpoint_dir is not None:
            save_text_checkpoint(Path(checkpoint_dir) / "last_finite", encoder, decoder,
                                 {"history": history, **(extra_meta or {})})
        raise
    finally:
        if metrics_fh:
            metrics_fh.close()
    encoder.load_state_dict(best_state)
    encoder.eval()
    if checkpoint_dir is not None:
        meta_path = Path(checkpoint_dir) / "checkpoint.json"
        meta = json.loads(meta_path.read_text())
        meta["history"] = history
        meta_path.write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return encoder, history
