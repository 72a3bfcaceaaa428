"""Tokenizers for the text encoder.

``HashingTokenizer`` needs no vocabulary file or training: each word is
mapped to a bucket by CRC32, so offline tests never download anything.
``HFTokenizer`` wraps a pretrained tokenizer directory.
"""

from __future__ import annotations

import logging
import re
import zlib
from typing import Sequence

import torch

from ..errors import ArgumentError

log = logging.getLogger(__name__)

_WORD_RE = re.compile(r"[a-z]+|\d+(?:\.\d+)?|[^\sa-z\d]")


class HashingTokenizer:
    PAD, CLS, SEP, UNK, BOS, EOS = range(6)
    N_SPECIAL = 6

    def __init__(self, vocab_size: int = 4096, max_len: int = 64):
        if vocab_size <= self.N_SPECIAL:
            raise ArgumentError("vocab_size too small")
        if max_len < 3:
            raise ArgumentError("max_len must be >= 3")
        self.vocab_size = vocab_size
        self.max_len = max_len
        self.pad_id = self.PAD
        self.bos_id = self.BOS
        self.eos_id = self.EOS

    def words(self, text: str) -> list[str]:
        return _WORD_RE.findall(text.lower())

    def word_id(self, word: str) -> int:
        return self.N_SPECIAL + zlib.crc32(word.encode("utf-8")) % (self.vocab_size - self.N_SPECIAL)

    def ids(self, text: str) -> list[int]:
        """Content token ids without special tokens (not truncated)."""
        return [self.word_id(w) for w in self.words(text)]

    def _check(self, texts: Sequence[str]):
        if not texts:
            raise ArgumentError("texts must be non-empty")
        for t in texts:
            if not isinstance(t, str) or not t.strip():
                raise ArgumentError("cannot encode an empty string")

    def __call__(self, texts: Sequence[str]) -> tuple[torch.Tensor, torch.Tensor]:
        """Batch encode as ``[CLS] w1 .. wn [SEP]``, padded; long texts keep their head."""
        self._check(texts)
        rows = []
        for t in texts:
            ids = self.ids(t)
            if len(ids) > self.max_len - 2:
                log.warning("text of %d tokens truncated to %d", len(ids), self.max_len - 2)
                ids = ids[: self.max_len - 2]
            rows.append([self.CLS, *ids, self.SEP])
        return _pad(rows, self.PAD)

    def decoder_targets(self, texts: Sequence[str]) -> tuple[torch.Tensor, torch.Tensor]:
        """``w1 .. wn [EOS]`` targets for reconstruction, padded."""
        self._check(texts)
        rows = [[*self.ids(t)[: self.max_len - 1], self.EOS] for t in texts]
        return _pad(rows, self.PAD)

    def state(self) -> dict:
        return {"kind": "hashing", "vocab_size": self.vocab_size, "max_len": self.max_len}


class HFTokenizer:
    """Adapter over a ``transformers`` tokenizer loaded from a local directory."""

    def __init__(self, path: str, max_len: int = 128):
        from transformers import AutoTokenizer

        self.path = path
        self._tok = AutoTokenizer.from_pretrained(path)
        self.max_len = max_len
        self.vocab_size = len(self._tok)
        self.pad_id = self._tok.pad_token_id or 0
        self.bos_id = self._tok.cls_token_id if self._tok.cls_token_id is not None else self.pad_id
        self.eos_id = self._tok.sep_token_id if self._tok.sep_token_id is not None else self.pad_id

    def __call__(self, texts: Sequence[str]) -> tuple[torch.Tensor, torch.Tensor]:
        if not texts or any(not t.strip() for t in texts):
            raise ArgumentError("cannot encode an empty string")
        enc = self._tok(list(texts), padding=True, truncation=True, max_length=self.max_len,
                        return_tensors="pt")
        return enc["input_ids"], enc["attention_mask"]

    def decoder_targets(self, texts: Sequence[str]) -> tuple[torch.Tensor, torch.Tensor]:
        rows = []
        for t in texts:
            ids = self._tok(t, add_special_tokens=False, truncation=True,
                            max_length=self.max_len - 1)["input_ids"]
            rows.append([*ids, self.eos_id])
        return _pad(rows, self.pad_id)

    def state(self) -> dict:
        return {"kind": "hf", "path": self.path, "max_len": self.max_len}


def _pad(rows: list[list[int]], pad: int) -> tuple[torch.Tensor, torch.Tensor]:
    width = max(len(r) for r in rows)
    ids = torch.full((len(rows), width), pad, dtype=torch.long)
    mask = torch.zeros((len(rows), width), dtype=torch.long)
    for i, r in enumerate(rows):
        ids[i, : len(r)] = torch.tensor(r, dtype=torch.long)
        mask[i, : len(r)] = 1
    return ids, mask


def tokenizer_from_state(state: dict):
    if state["kind"] == "hashing":
        return HashingTokenizer(state["vocab_size"], state["max_len"])
    if state["kind"] == "hf":
        return HFTokenizer(state["path"], state["max_len"])
    raise ArgumentError(f"unknown tokenizer kind {state['kind']!r}")
