"""Generate semantic interpretations through a backend with caching and retries."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

from ..errors import ArgumentError, BackendError, TransientBackendError
from .backends import DecodeParams, LLMBackend
from .cache import ResponseCache
from .prompts import PromptBundle, parse_response

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SemanticInterpretation:
    target_id: str
    kind: str
    text: str
    backend_id: str
    attempt: int
    prompt_hash: str
    retries: int = 0
    cached: bool = False

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ArgumentError("interpretation text must be non-empty")
        if self.attempt < 1:
            raise ArgumentError("attempt must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("cached")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SemanticInterpretation":
        return cls(**{k: d[k] for k in ("target_id", "kind", "text", "backend_id", "attempt",
                                         "prompt_hash")}, retries=d.get("retries", 0))


def generate_interpretation(bundle: PromptBundle, backend: LLMBackend, cache: ResponseCache | None,
                            params: DecodeParams = DecodeParams(), max_retries: int = 3,
                            backoff_s: float = 0.5,
                            sleep: Callable[[float], None] = time.sleep) -> SemanticInterpretation:
    """Return the interpretation for ``bundle``, consulting the cache first.

    Transient backend failures are retried up to ``max_retries`` times with
    exponential backoff. A response without the required format raises
    ``ParseError`` and is not cached.
    """
    content_hash = bundle.content_hash
    pkey = params.key()
    if cache is not None:
        rec = cache.get(backend.backend_id, content_hash, pkey, bundle.attempt)
        if rec is not None:
            return SemanticInterpretation(target_id=bundle.target_id, kind=bundle.target_kind,
                                          text=parse_response(rec["response"]),
                                          backend_id=backend.backend_id, attempt=bundle.attempt,
                                          prompt_hash=content_hash, retries=rec.get("retries", 0),
                                          cached=True)
    retries = 0
    while True:
        try:
            raw = backend.generate(bundle.text, params)
            break
        except TransientBackendError as exc:
            if retries >= max_retries:
                raise BackendError(
                    f"backend {backend.backend_id} failed after {retries + 1} calls: {exc}") from exc
            delay = backoff_s * (2 ** retries)
            log.warning("transient backend failure (%s); retrying in %.2fs", exc, delay)
            retries += 1
            sleep(delay)
    text = parse_response(raw)
    if cache is not None:
        cache.put({"backend_id": backend.backend_id, "content_hash": content_hash, "params_key": pkey,
                   "params": asdict(params), "attempt": bundle.attempt, "target_id": bundle.target_id,
                   "kind": bundle.target_kind, "prompt": bundle.text, "response": raw,
                   "retries": retries})
    return SemanticInterpretation(target_id=bundle.target_id, kind=bundle.target_kind, text=text,
                                  backend_id=backend.backend_id, attempt=bundle.attempt,
                                  prompt_hash=content_hash, retries=retries)


def generate_many(bundles: Sequence[PromptBundle], backend: LLMBackend, cache: ResponseCache | None,
                  params: DecodeParams = DecodeParams(), concurrency: int = 4,
                  **kwargs) -> list[SemanticInterpretation]:
    """Order-preserving batch generation with at most ``concurrency`` calls in flight."""
    if concurrency <= 1 or len(bundles) <= 1:
        return [generate_interpretation(b, backend, cache, params, **kwargs) for b in bundles]
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        futures = [pool.submit(generate_interpretation, b, backend, cache, params, **kwargs)
                   for b in bundles]
        return [f.result() for f in futures]
