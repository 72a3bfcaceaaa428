"""Per-window signal analyses embedded in the sensor prompt."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .data import CHANNELS, IMUWindow
from .errors import ArgumentError

_TIE_RTOL = 1e-9


def dominant_frequency(signal, rate_hz: float) -> float:
    """Frequency (Hz) of the strongest non-DC DFT bin.

    The mean is removed first and the Nyquist bin is excluded, so the result
    lies in ``[rate_hz / n, rate_hz / 2)``. Near-ties go to the lower bin; a
    constant signal therefore reports the lowest positive bin.
    """
    x = np.asarray(signal, dtype=np.float64)
    n = x.shape[0]
    if n < 4:
        raise ArgumentError(f"dominant_frequency needs >= 4 samples, got {n}")
    if rate_hz <= 0:
        raise ArgumentError("rate_hz must be positive")
    n_bins = (n - 1) // 2  # positive bins strictly below Nyquist
    if np.ptp(x) == 0:
        return rate_hz / n
    mags = np.abs(np.fft.rfft(x - x.mean()))[1:n_bins + 1]
    top = mags.max()
    k = int(np.flatnonzero(mags >= top * (1.0 - _TIE_RTOL))[0]) + 1
    return k * rate_hz / n


def periodicity_score(signal, rate_hz: float) -> float:
    """Peak Pearson autocorrelation over lags spanning 10 Hz down to 0.5 Hz.

    Lags are ``ceil(rate/10) .. floor(rate/0.5)`` samples, capped so every
    lag keeps at least four overlapping points. Clamped to [0, 1]; a
    zero-variance signal scores 0.
    """
    x = np.asarray(signal, dtype=np.float64)
    n = x.shape[0]
    if n < 8:
        raise ArgumentError(f"periodicity_score needs >= 8 samples, got {n}")
    if np.ptp(x) == 0:
        return 0.0
    lo = max(1, math.ceil(rate_hz / 10.0))
    hi = min(int(math.floor(rate_hz / 0.5)), n - 4)
    if lo > hi:
        lo, hi = 1, n - 4
    best = 0.0
    for lag in range(lo, hi + 1):
        a, b = x[:-lag], x[lag:]
        sa, sb = a.std(), b.std()
        if sa == 0 or sb == 0:
            continue
        r = float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))
        best = max(best, r)
    return float(min(1.0, max(0.0, best)))


@dataclass(frozen=True)
class WindowStats:
    rate_hz: float
    mean: tuple[float, ...]
    std: tuple[float, ...]
    max: tuple[float, ...]
    min: tuple[float, ...]
    amplitude: tuple[float, ...]
    dominant_freq_hz: tuple[float, ...]
    periodicity: tuple[float, ...]
    degenerate: tuple[bool, ...]

    def to_dict(self) -> dict:
        out: dict = {"rate_hz": self.rate_hz}
        fields = (("mean", self.mean), ("std", self.std), ("max", self.max), ("min", self.min),
                  ("amp", self.amplitude), ("domfreq", self.dominant_freq_hz),
                  ("period", self.periodicity), ("degen", self.degenerate))
        for prefix, values in fields:
            for ch, v in zip(CHANNELS, values):
                out[f"{prefix}_{ch}"] = v
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "WindowStats":
        def col(prefix, cast=float):
            return tuple(cast(d[f"{prefix}_{ch}"]) for ch in CHANNELS)

        return cls(rate_hz=float(d["rate_hz"]), mean=col("mean"), std=col("std"), max=col("max"),
                   min=col("min"), amplitude=col("amp"), dominant_freq_hz=col("domfreq"),
                   periodicity=col("period"), degenerate=col("degen", bool))


def compute_stats(window: IMUWindow) -> WindowStats:
    x = window.data
    rate = float(window.rate_hz)
    means, stds, maxs, mins, amps, freqs, periods, degen = ([] for _ in range(8))
    for c in range(x.shape[1]):
        col = x[:, c]
        hi, lo = float(col.max()), float(col.min())
        flat = hi == lo
        if flat:
            mu, sd = hi, 0.0
        else:
            mu = float(min(hi, max(lo, col.mean())))
            sd = float(col.std())
        means.append(mu)
        stds.append(sd)
        maxs.append(hi)
        mins.append(lo)
        amps.append(hi - lo)
        degen.append(flat)
        freqs.append(0.0 if flat else dominant_frequency(col, rate))
        periods.append(0.0 if flat else periodicity_score(col, rate))
    return WindowStats(rate_hz=rate, mean=tuple(means), std=tuple(stds), max=tuple(maxs),
                       min=tuple(mins), amplitude=tuple(amps), dominant_freq_hz=tuple(freqs),
                       periodicity=tuple(periods), degenerate=tuple(degen))
