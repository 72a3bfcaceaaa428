"""Stage 2: transformer sensor encoder mapping IMU windows into the language space."""

from __future__ import annotations

import copy
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

from .data import IMUWindow
from .errors import ArgumentError, LoadError, NumericalError, StateError
from .losses import cosine_matrix, loss_sensor
from .text.train import TrainConfig

log = logging.getLogger(__name__)

ARTIFACT_VERSION = 1


class Normalizer:
    """Per-channel standardization fitted on source training windows only."""

    def __init__(self, mean: Sequence[float] | None = None, std: Sequence[float] | None = None):
        self.mean = None if mean is None else np.asarray(mean, dtype=np.float64)
        self.std = None if std is None else np.asarray(std, dtype=np.float64)

    @property
    def fitted(self) -> bool:
        return self.mean is not None and self.std is not None

    def fit(self, windows: Sequence[IMUWindow] | np.ndarray) -> "Normalizer":
        arr = _as_array(windows)
        if arr.size == 0:
            raise ArgumentError("cannot fit a normalizer on zero windows")
        flat = arr.reshape(-1, 6)
        self.mean = flat.mean(axis=0)
        std = flat.std(axis=0)
        self.std = np.where(std > 1e-8, std, 1.0)
        return self

    def transform(self, x) -> np.ndarray:
        if not self.fitted:
            raise StateError("normalizer has not been fitted")
        x = x.data if isinstance(x, IMUWindow) else np.asarray(x, dtype=np.float64)
        return (x - self.mean) / self.std

    def state(self) -> dict:
        if not self.fitted:
            raise StateError("normalizer has not been fitted")
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}


def normalize_imu(window: IMUWindow | np.ndarray, normalizer_state: Normalizer) -> np.ndarray:
    return normalizer_state.transform(window)


def _as_array(windows) -> np.ndarray:
    if isinstance(windows, np.ndarray):
        return windows.astype(np.float64)
    return np.stack([w.data for w in windows]) if len(windows) else np.zeros((0, 0, 6))


@dataclass
class SensorEncoderConfig:
    window_len: int = 120
    d_model: int = 768
    layers: int = 3
    heads: int = 2
    ff_mult: int = 4
    dropout: float = 0.1
    out_dim: int | None = None  # defaults to d_model; must equal the text embedding size


def sinusoidal_table(n: int, d: int) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float32).unsqueeze(1)
    div = torch.exp(torch.arange(0, d, 2, dtype=torch.float32) * (-math.log(10000.0) / d))
    pe = torch.zeros(n, d)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)[:, : d // 2]
    return pe


class SensorEncoder(nn.Module):
    """project -> LayerNorm -> + positions -> post-norm encoder layers -> mean over time."""

    def __init__(self, config: SensorEncoderConfig):
        super().__init__()
        self.config = config
        d = config.d_model
        self.proj = nn.Linear(6, d)
        self.norm = nn.LayerNorm(d)
        self.register_buffer("pe", sinusoidal_table(config.window_len, d), persistent=False)
        layer = nn.TransformerEncoderLayer(d, config.heads, config.ff_mult * d, config.dropout,
                                           batch_first=True, norm_first=False)
        self.encoder = nn.TransformerEncoder(layer, config.layers, enable_nested_tensor=False)
        out_dim = config.out_dim or d
        self.head = nn.Identity() if out_dim == d else nn.Linear(d, out_dim)
        self.out_dim = out_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim == 2:
            return self.forward(x.unsqueeze(0)).squeeze(0)
        if x.ndim != 3 or x.shape[1] != self.config.window_len or x.shape[2] != 6:
            raise ArgumentError(f"expected input (N, {self.config.window_len}, 6), got {tuple(x.shape)}")
        h = self.norm(self.proj(x))
        h = h + self.pe.unsqueeze(0)
        h = self.encoder(h)
        return self.head(h.mean(dim=1))


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def retrieval_accuracy(E: torch.Tensor, Z: torch.Tensor, batch_size: int) -> float:
    """Fraction of rows whose nearest in-batch target equals their own target.

    Targets that coincide (cosine >= 1 - 1e-6) count as the same target, since
    identical interpretations legitimately share one embedding.
    """
    hits, total = 0, 0
    for s in range(0, E.shape[0], batch_size):
        e, z = E[s:s + batch_size], Z[s:s + batch_size]
        nearest = cosine_matrix(e, z).argmax(dim=1)
        same = cosine_matrix(z, z)
        idx = torch.arange(e.shape[0])
        hits += int((same[idx, nearest] >= 1 - 1e-6).sum())
        total += e.shape[0]
    return hits / max(total, 1)


def _embed_batched(model: SensorEncoder, X: torch.Tensor, batch_size: int = 128) -> torch.Tensor:
    return torch.cat([model(X[i:i + batch_size]) for i in range(0, X.shape[0], batch_size)], dim=0)


def train_sensor_encoder(X: np.ndarray, Z: np.ndarray, config: TrainConfig,
                         encoder_config: SensorEncoderConfig,
                         val: tuple[np.ndarray, np.ndarray] | None = None,
                         model: SensorEncoder | None = None,
                         metrics_path: str | Path | None = None,
                         select: str = "val_retrieval") -> tuple[SensorEncoder, list[dict]]:
    """Fit the encoder so E_i matches the frozen interpretation embedding Z_i.

    ``X`` holds normalized windows (N, L, 6). The returned model is the one
    with the best validation score: highest ``val_retrieval`` (default) or
    lowest ``val_loss``; ties keep the later epoch.
    """
    if X.shape[0] != Z.shape[0] or X.shape[0] == 0:
        raise ArgumentError("every window needs exactly one target embedding")
    if select not in ("val_retrieval", "val_loss"):
        raise ArgumentError(f"unknown selection metric {select!r}")
    torch.manual_seed(config.seed)
    if model is None:
        model = SensorEncoder(encoder_config)
    if model.out_dim != Z.shape[1]:
        raise ArgumentError(f"sensor output dim {model.out_dim} != target dim {Z.shape[1]}")
    gen = torch.Generator().manual_seed(config.seed)
    Xt = torch.as_tensor(X, dtype=torch.float32)
    Zt = torch.as_tensor(Z, dtype=torch.float32)
    Xv, Zv = (Xt, Zt) if val is None else (torch.as_tensor(val[0], dtype=torch.float32),
                                            torch.as_tensor(val[1], dtype=torch.float32))
    opt = torch.optim.AdamW(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)

    def evaluate() -> dict:
        model.eval()
        with torch.no_grad():
            Ev = _embed_batched(model, Xv)
            acc = retrieval_accuracy(Ev, Zv, config.batch_size)
            losses = [float(loss_sensor(Ev[i:i + config.batch_size], Zv[i:i + config.batch_size],
                                        config.tau)) * len(Ev[i:i + config.batch_size])
                      for i in range(0, Ev.shape[0], config.batch_size)]
        model.train()
        return {"val_retrieval": acc, "val_loss": sum(losses) / Ev.shape[0]}

    def score(rec: dict) -> float:
        return rec["val_retrieval"] if select == "val_retrieval" else -rec["val_loss"]

    history = [{"epoch": 0, **evaluate()}]
    best = score(history[0])
    best_state = copy.deepcopy(model.state_dict())
    fh = open(metrics_path, "w") if metrics_path else None
    try:
        if fh:
            fh.write(json.dumps(history[0], sort_keys=True) + "\n")
        model.train()
        for epoch in range(1, config.epochs + 1):
            total, nb = 0.0, 0
            for idx in torch.randperm(Xt.shape[0], generator=gen).split(config.batch_size):
                if idx.numel() < 2:
                    continue
                loss = loss_sensor(model(Xt[idx]), Zt[idx], config.tau)
                if not torch.isfinite(loss):
                    raise NumericalError("sensor loss is not finite", component="sensor")
                opt.zero_grad()
                loss.backward()
                if config.grad_clip:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
                opt.step()
                total += float(loss.detach())
                nb += 1
            rec = {"epoch": epoch, "train_sensor": total / max(nb, 1), **evaluate()}
            history.append(rec)
            if fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
            if not math.isfinite(rec["val_loss"]):
                raise NumericalError("validation sensor loss is not finite", component="sensor")
            if score(rec) >= best:
                best = score(rec)
                best_state = copy.deepcopy(model.state_dict())
    except NumericalError:
        if not all(torch.isfinite(p).all() for p in model.parameters()):
            model.load_state_dict(best_state)
        raise
    finally:
        if fh:
            fh.close()
    model.load_state_dict(best_state)
    model.eval()
    return model, history


# -- exported inference artifact ------------------------------------------------


@dataclass
class SensorModel:
    """Everything inference needs: weights, normalizer and input contract."""

    encoder: SensorEncoder
    normalizer: Normalizer
    rate_hz: float
    text_checkpoint_id: str | None = None

    @property
    def window_len(self) -> int:
        return self.encoder.config.window_len

    def check_window(self, window: IMUWindow) -> None:
        if window.window_len != self.window_len:
            raise ArgumentError(f"window length {window.window_len} != encoder window length "
                                f"{self.window_len}")
        if not math.isclose(window.rate_hz, self.rate_hz):
            raise ArgumentError(f"window rate {window.rate_hz} Hz != encoder rate {self.rate_hz} Hz")

    def embed(self, windows: Sequence[IMUWindow], batch_size: int = 128) -> np.ndarray:
        for w in windows:
            self.check_window(w)
        X = np.stack([self.normalizer.transform(w) for w in windows])
        self.encoder.eval()
        with torch.no_grad():
            E = _embed_batched(self.encoder, torch.as_tensor(X, dtype=torch.float32), batch_size)
        return E.double().numpy()

    def save(self, directory: str | Path) -> str:
        from safetensors.torch import save_file

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        weights = directory / "weights.safetensors"
        save_file({k: v.contiguous() for k, v in self.encoder.state_dict().items()}, str(weights))
        artifact_id = hashlib.sha256(weights.read_bytes()).hexdigest()[:16]
        manifest = {
            "version": ARTIFACT_VERSION,
            "artifact_id": artifact_id,
            "window_len": self.window_len,
            "rate_hz": self.rate_hz,
            "d": self.encoder.out_dim,
            "encoder_config": asdict(self.encoder.config),
            "normalizer": self.normalizer.state(),
            "text_checkpoint_id": self.text_checkpoint_id,
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        return artifact_id

    @classmethod
    def load(cls, directory: str | Path) -> "SensorModel":
        from safetensors.torch import load_file

        directory = Path(directory)
        mpath = directory / "manifest.json"
        if not mpath.exists():
            raise LoadError(f"sensor artifact not found: {directory}")
        manifest = json.loads(mpath.read_text())
        if manifest.get("version") != ARTIFACT_VERSION:
            raise LoadError(f"unsupported sensor artifact version {manifest.get('version')}")
        enc = SensorEncoder(SensorEncoderConfig(**manifest["encoder_config"]))
        enc.load_state_dict(load_file(str(directory / "weights.safetensors")))
        enc.eval()
        norm = Normalizer(manifest["normalizer"]["mean"], manifest["normalizer"]["std"])
        return cls(enc, norm, float(manifest["rate_hz"]), manifest.get("text_checkpoint_id"))
