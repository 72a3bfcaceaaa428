"""Bidirectional text encoder (BERT-style) and the reconstruction decoder."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from ..errors import ArgumentError, LoadError
from .tokenizer import HashingTokenizer, HFTokenizer, tokenizer_from_state

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class TextEncoderConfig:
    d: int = 768
    layers: int = 12
    heads: int = 12
    ff_mult: int = 4
    vocab_size: int = 4096
    max_len: int = 64
    dropout: float = 0.1
    pretrained: str | None = None  # local directory with HF weights + tokenizer

    @classmethod
    def tiny(cls, **overrides) -> "TextEncoderConfig":
        base = dict(d=64, layers=2, heads=2, ff_mult=4, vocab_size=2048, max_len=64, dropout=0.1)
        base.update(overrides)
        return cls(**base)


class TextEncoder(nn.Module):
    """Transformer encoder over tokens, mean-pooled over non-padding positions."""

    def __init__(self, config: TextEncoderConfig):
        super().__init__()
        from transformers import AutoModel, BertConfig, BertModel

        self.config = config
        if config.pretrained:
            self.tokenizer = HFTokenizer(config.pretrained, config.max_len)
            self.backbone = AutoModel.from_pretrained(config.pretrained)
            config.d = int(self.backbone.config.hidden_size)
            config.vocab_size = self.tokenizer.vocab_size
        else:
            self.tokenizer = HashingTokenizer(config.vocab_size, config.max_len)
            bert_cfg = BertConfig(vocab_size=config.vocab_size, hidden_size=config.d,
                                  num_hidden_layers=config.layers, num_attention_heads=config.heads,
                                  intermediate_size=config.ff_mult * config.d,
                                  max_position_embeddings=max(config.max_len, 8),
                                  hidden_dropout_prob=config.dropout,
                                  attention_probs_dropout_prob=config.dropout)
            self.backbone = BertModel(bert_cfg, add_pooling_layer=False)
        self.dim = config.d

    def forward(self, input_ids: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        hidden = self.backbone(input_ids=input_ids, attention_mask=attention_mask).last_hidden_state
        m = attention_mask.unsqueeze(-1).to(hidden.dtype)
        return (hidden * m).sum(dim=1) / m.sum(dim=1).clamp_min(1.0)

    def embed(self, texts: Sequence[str]) -> torch.Tensor:
        ids, mask = self.tokenizer(list(texts))
        return self(ids, mask)


def encode_text(encoder: TextEncoder, texts: Sequence[str], batch_size: int = 64) -> np.ndarray:
    """Eval-mode, gradient-free embeddings, one row per text."""
    texts = list(texts)
    if not texts:
        raise ArgumentError("texts must be non-empty")
    was_training = encoder.training
    encoder.eval()
    out = []
    with torch.no_grad():
        for i in range(0, len(texts), batch_size):
            out.append(encoder.embed(texts[i:i + batch_size]).double().numpy())
    encoder.train(was_training)
    return np.concatenate(out, axis=0)


@dataclass
class TextDecoderConfig:
    d: int = 64
    layers: int = 1
    heads: int = 2
    ff_mult: int = 4
    dropout: float = 0.1


def _sinusoid(n: int, d: int) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float32).unsqueeze(1)
    div = torch.exp(torch.arange(0, d, 2, dtype=torch.float32) * (-math.log(10000.0) / d))
    pe = torch.zeros(n, d)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)[:, : d // 2]
    return pe


class TextDecoder(nn.Module):
    """Causal transformer that reconstructs a text from its pooled embedding.

    The embedding is projected into a virtual first token; position t then
    predicts target token t from the virtual token and tokens < t.
    """

    def __init__(self, enc_dim: int, vocab_size: int, config: TextDecoderConfig = TextDecoderConfig(),
                 max_len: int = 64):
        super().__init__()
        self.config = config
        self.vocab_size = vocab_size
        self.cond = nn.Linear(enc_dim, config.d)
        self.tok = nn.Embedding(vocab_size, config.d)
        self.register_buffer("pe", _sinusoid(max_len + 1, config.d), persistent=False)
        layer = nn.TransformerEncoderLayer(config.d, config.heads, config.ff_mult * config.d,
                                           config.dropout, batch_first=True)
        self.stack = nn.TransformerEncoder(layer, config.layers, enable_nested_tensor=False)
        self.out = nn.Linear(config.d, vocab_size)

    def forward(self, embedding: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
        """Log-probabilities of shape (N, T, V) for teacher-forced ``targets`` (N, T)."""
        n, t = targets.shape
        prev = targets[:, :-1]
        x = torch.cat([self.cond(embedding).unsqueeze(1), self.tok(prev)], dim=1)
        x = x + self.pe[:t].unsqueeze(0)
        causal = torch.triu(torch.full((t, t), float("-inf")), diagonal=1)
        h = self.stack(x, mask=causal)
        return torch.log_softmax(self.out(h), dim=-1)


def loss_reconstruction(decoder: TextDecoder, embeddings: torch.Tensor, target_texts: Sequence[str],
                        tokenizer) -> torch.Tensor:
    from ..losses import token_cross_entropy

    if any(not t or not t.strip() for t in target_texts):
        raise ArgumentError("empty reconstruction target")
    targets, mask = tokenizer.decoder_targets(list(target_texts))
    return token_cross_entropy(decoder(embeddings, targets), targets, mask)


# -- checkpoints -----------------------------------------------------------------


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def save_text_checkpoint(directory: str | Path, encoder: TextEncoder, decoder: TextDecoder | None,
                         extra: dict | None = None) -> str:
    """Write ``weights.safetensors`` + ``checkpoint.json``; returns the checkpoint id."""
    from safetensors.torch import save_file

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = {f"encoder.{k}": v.detach().contiguous() for k, v in encoder.state_dict().items()}
    if decoder is not None:
        tensors.update({f"decoder.{k}": v.detach().contiguous()
                        for k, v in decoder.state_dict().items()})
    weights = directory / "weights.safetensors"
    save_file(tensors, str(weights))
    ckpt_id = _digest(weights)
    sidecar = {
        "version": CHECKPOINT_VERSION,
        "checkpoint_id": ckpt_id,
        "encoder_config": asdict(encoder.config),
        "decoder_config": asdict(decoder.config) if decoder is not None else None,
        "tokenizer": encoder.tokenizer.state(),
        **(extra or {}),
    }
    (directory / "checkpoint.json").write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n")
    return ckpt_id


def load_text_checkpoint(directory: str | Path, with_decoder: bool = False):
    """Returns ``(encoder, decoder_or_None, sidecar)`` with the encoder in eval mode."""
    from safetensors.torch import load_file

    directory = Path(directory)
    meta_path = directory / "checkpoint.json"
    if not meta_path.exists():
        raise LoadError(f"text checkpoint not found: {directory}")
    meta = json.loads(meta_path.read_text())
    if meta.get("version") != CHECKPOINT_VERSION:
        raise LoadError(f"unsupported checkpoint version {meta.get('version')}")
    tensors = load_file(str(directory / "weights.safetensors"))
    cfg = TextEncoderConfig(**meta["encoder_config"])
    encoder = TextEncoder(cfg)
    encoder.tokenizer = tokenizer_from_state(meta["tokenizer"])
    encoder.load_state_dict({k[len("encoder."):]: v for k, v in tensors.items()
                             if k.startswith("encoder.")})
    encoder.eval()
    decoder = None
    if with_decoder and meta.get("decoder_config"):
        decoder = TextDecoder(cfg.d, encoder.tokenizer.vocab_size,
                              TextDecoderConfig(**meta["decoder_config"]), cfg.max_len)
        decoder.load_state_dict({k[len("decoder."):]: v for k, v in tensors.items()
                                 if k.startswith("decoder.")})
        decoder.eval()
    return encoder, decoder, meta
