"""Experiment configuration: strict schema, TOML loading, overrides, fingerprints."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .data import CANONICAL_LABELS, COMMON_ACTIVITIES
from .errors import ConfigError

try:  # Python >= 3.11
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover - 3.10
    import tomli as _toml


def toml_loads(text: str) -> dict:
    return _toml.loads(text)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class DatasetConfig(_Strict):
    name: str
    path: str
    format: Literal["canonical_csv", "canonical_jsonl"] = "canonical_csv"
    role: Literal["source", "target"] = "source"
    rate_hz: Optional[float] = Field(default=None, gt=0)


class PreprocessConfig(_Strict):
    rate_hz: float = Field(default=20.0, gt=0)
    window_len: int = Field(default=120, ge=8)
    stride: int = Field(default=60, ge=1)
    train_fraction: float = Field(default=0.8, gt=0, le=1)
    aliases_file: Optional[str] = None


class BackendConfig(_Strict):
    kind: Literal["mock", "replay", "http"] = "mock"
    endpoint: Optional[str] = None
    model: str = "default"
    api_key_env: str = "LANHAR_API_KEY"
    replay_dir: Optional[str] = None
    cache_dir: Optional[str] = None  # defaults to <run>/cache
    temperature: float = Field(default=0.0, ge=0)
    max_tokens: int = Field(default=256, ge=1)
    max_retries: int = Field(default=3, ge=0)
    backoff_s: float = Field(default=0.5, ge=0)
    timeout_s: float = Field(default=60.0, gt=0)
    concurrency: int = Field(default=4, ge=1)
    hallucination_rate: float = Field(default=0.1, ge=0, le=1)


class InterpretConfig(_Strict):
    label_variants: int = Field(default=3, ge=1)
    knowledge_file: Optional[str] = None


class FilterSection(_Strict):
    enabled: bool = True
    k: int = Field(default=2, ge=1)
    max_iterations: int = Field(default=10, ge=1)
    patience: int = Field(default=3, ge=1)
    min_rel_improvement: float = Field(default=0.01, ge=0, lt=1)


class TrainSection(_Strict):
    tau: float = Field(default=0.07, gt=0)
    alpha: float = Field(default=0.1, ge=0)
    beta: float = Field(default=0.01, ge=0)
    lr: float = Field(default=1e-5, gt=0)
    weight_decay: float = Field(default=0.01, ge=0)
    batch_size: int = Field(default=32, ge=2)
    epochs: int = Field(default=10, ge=0)
    max_triples: int = Field(default=64, ge=1)
    grad_clip: float = Field(default=1.0, ge=0)


class TextSection(_Strict):
    d: int = Field(default=768, ge=2)
    layers: int = Field(default=12, ge=1)
    heads: int = Field(default=12, ge=1)
    ff_mult: int = Field(default=4, ge=1)
    vocab_size: int = Field(default=4096, ge=16)
    max_len: int = Field(default=64, ge=8)
    dropout: float = Field(default=0.1, ge=0, lt=1)
    pretrained: Optional[str] = None
    decoder_d: int = Field(default=64, ge=2)
    decoder_layers: int = Field(default=1, ge=1)
    decoder_heads: int = Field(default=2, ge=1)
    train: TrainSection = TrainSection()


class SensorSection(_Strict):
    d_model: int = Field(default=768, ge=2)
    layers: int = Field(default=3, ge=1)
    heads: int = Field(default=2, ge=1)
    ff_mult: int = Field(default=4, ge=1)
    dropout: float = Field(default=0.1, ge=0, lt=1)
    corpus: Literal["source", "source_and_target"] = "source_and_target"
    select: Literal["val_retrieval", "val_loss"] = "val_retrieval"
    train: TrainSection = TrainSection()


class EvalSection(_Strict):
    protocol: Literal["single", "cross_dataset", "new_activity"] = "single"
    bank_mode: Literal["union", "new_only"] = "union"
    min_similarity: Optional[float] = Field(default=None, ge=-1, le=1)
    common_activities: list[str] = list(COMMON_ACTIVITIES)
    train_activities: Optional[list[str]] = None
    candidate_labels: Optional[list[str]] = None

    @field_validator("common_activities", "train_activities", "candidate_labels")
    @classmethod
    def _canonical(cls, v):
        if v is None:
            return v
        bad = [x for x in v if x not in CANONICAL_LABELS]
        if bad:
            raise ValueError(f"non-canonical labels {bad}")
        return v


class ExperimentConfig(_Strict):
    seed: int = 0
    run_root: str = "runs"
    datasets: list[DatasetConfig] = []
    preprocess: PreprocessConfig = PreprocessConfig()
    backend: BackendConfig = BackendConfig()
    interpret: InterpretConfig = InterpretConfig()
    filter: FilterSection = FilterSection()
    text: TextSection = TextSection()
    sensor: SensorSection = SensorSection()
    eval: EvalSection = EvalSection()
    categories: Optional[dict[str, int]] = None

    @field_validator("categories")
    @classmethod
    def _cats(cls, v):
        if v is None:
            return v
        bad = [k for k, c in v.items() if k not in CANONICAL_LABELS or c not in (1, 2, 3)]
        if bad:
            raise ValueError(f"invalid category entries {bad}")
        return v

    @property
    def fingerprint(self) -> str:
        blob = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _error_keys(exc: ValidationError) -> list[str]:
    return sorted({".".join(str(p) for p in err["loc"]) for err in exc.errors()})


def validate_config(raw: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        keys = _error_keys(exc)
        detail = "; ".join(f"{'.'.join(map(str, e['loc']))}: {e['msg']}" for e in exc.errors())
        raise ConfigError(f"invalid config ({detail})", keys=keys) from None


def _parse_value(text: str) -> Any:
    try:
        return toml_loads(f"v = {text}")["v"]
    except Exception:
        return text


def apply_overrides(raw: dict, overrides: list[str] | None) -> dict:
    """Apply ``dotted.key=value`` overrides; values use TOML literal syntax."""
    raw = json.loads(json.dumps(raw))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value", keys=[item])
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = raw
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-table", keys=[key])
        node[parts[-1]] = _parse_value(value.strip())
    return raw


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> ExperimentConfig:
    """Read a TOML config (empty file -> all defaults) and apply overrides."""
    raw: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}", keys=[])
        try:
            raw = toml_loads(path.read_text())
        except _toml.TOMLDecodeError as exc:
            raise ConfigError(f"config is not valid TOML: {exc}", keys=[]) from None
    return validate_config(apply_overrides(raw, overrides))


def derive_seed(seed: int, name: str) -> int:
    """Named, stable sub-seed so each module draws from its own stream."""
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:4], "big")
