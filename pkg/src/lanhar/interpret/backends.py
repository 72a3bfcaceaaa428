"""Pluggable LLM backends: HTTP client, replay-from-disk, and a deterministic mock."""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

from ..data import CHANNELS
from ..errors import BackendError, TransientBackendError
from .prompts import CORRECTION_INSTRUCTION, RESPONSE_MARKER


@dataclass(frozen=True)
class DecodeParams:
    temperature: float = 0.0
    max_tokens: int = 256

    def key(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@runtime_checkable
class LLMBackend(Protocol):
    backend_id: str

    def generate(self, prompt: str, params: DecodeParams) -> str: ...


class HTTPBackend:
    """Text-in/text-out client for a single JSON endpoint.

    Request body: ``{"model", "prompt", "temperature", "max_tokens"}``; the
    response must carry the generated text under ``"text"``. The API key is
    read from the environment variable named by ``api_key_env``.
    """

    def __init__(self, endpoint: str, model: str = "default", api_key_env: str = "LANHAR_API_KEY",
                 timeout_s: float = 60.0, transport=None):
        import httpx

        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.backend_id = f"http-{model}"
        self._client = httpx.Client(timeout=timeout_s, transport=transport)

    def generate(self, prompt: str, params: DecodeParams) -> str:
        import httpx

        key = os.environ.get(self.api_key_env)
        if not key:
            raise BackendError(f"environment variable {self.api_key_env} is not set")
        body = {"model": self.model, "prompt": prompt, "temperature": params.temperature,
                "max_tokens": params.max_tokens}
        try:
            resp = self._client.post(self.endpoint, json=body,
                                     headers={"Authorization": f"Bearer {key}"})
        except (httpx.TimeoutException, httpx.TransportError) as exc:
            raise TransientBackendError(f"{type(exc).__name__}: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientBackendError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return str(resp.json()["text"])
        except (ValueError, KeyError, TypeError) as exc:
            raise BackendError(f"malformed backend payload: {exc}") from exc


class ReplayBackend:
    """Serves responses recorded earlier, keyed by the sha256 of the prompt text.

    Accepts a cache directory (any ``*.json`` record with ``prompt`` and
    ``response`` keys, searched recursively) so a mock or HTTP run can be
    replayed offline.
    """

    def __init__(self, directory: str | Path, backend_id: str = "replay"):
        self.backend_id = backend_id
        self._by_hash: dict[str, str] = {}
        directory = Path(directory)
        if not directory.exists():
            raise BackendError(f"replay directory not found: {directory}")
        for path in sorted(directory.rglob("*.json")):
            try:
                rec = json.loads(path.read_text())
            except json.JSONDecodeError:
                continue
            if isinstance(rec, dict) and "prompt" in rec and "response" in rec:
                h = hashlib.sha256(rec["prompt"].encode("utf-8")).hexdigest()
                self._by_hash.setdefault(h, rec["response"])

    def __len__(self) -> int:
        return len(self._by_hash)

    def generate(self, prompt: str, params: DecodeParams) -> str:
        h = hashlib.sha256(prompt.encode("utf-8")).hexdigest()
        if h not in self._by_hash:
            raise BackendError(f"no recorded response for prompt {h[:12]}")
        return self._by_hash[h]


# -- deterministic template mock ----------------------------------------------

BANDS = ("static", "slow", "moderate", "brisk")
REGIMES = ("low", "medium", "high")

_REGIME_PHRASE = {
    "low": "very low motion energy with a low amplitude regime",
    "medium": "steady motion energy with a medium amplitude regime",
    "high": "strong motion energy with a high amplitude regime",
}
_BAND_PHRASE = {
    "static": "no dominant rhythm, the frequency band is static",
    "slow": "a slow dominant frequency band",
    "moderate": "a moderate dominant frequency band",
    "brisk": "a brisk dominant frequency band",
}
_RHYTHM_PHRASE = {
    "rhythmic": "the pattern repeats regularly from cycle to cycle",
    "irregular": "the pattern is irregular without clear repetition",
}

# Knowledge the mock "has" about canonical activities: band, regime, rhythm, overview, body parts.
ACTIVITY_PROFILES: dict[str, tuple[str, str, str, str, str]] = {
    "walking": ("moderate", "medium", "rhythmic", "walking is steady upright locomotion on foot",
                "legs, hips and swinging arms"),
    "jogging": ("brisk", "high", "rhythmic", "jogging is running at an easy sustained pace",
                "legs, feet, core and pumping arms"),
    "biking": ("slow", "medium", "rhythmic", "biking is riding a bicycle by pedalling",
               "thighs, knees and feet on the pedals"),
    "sitting": ("static", "low", "irregular", "sitting is resting with the weight on the seat",
                "hips and back supported, limbs mostly still"),
    "standing": ("static", "low", "irregular", "standing is staying upright in place",
                 "feet and legs bearing the weight, trunk upright"),
    "lying": ("static", "low", "irregular", "lying is resting with the body horizontal",
              "the whole body resting, trunk horizontal"),
    "going_upstairs": ("slow", "medium", "rhythmic", "going upstairs is climbing steps upward",
                       "thighs, knees and calves lifting the body"),
    "going_downstairs": ("moderate", "high", "rhythmic", "going downstairs is descending steps",
                         "knees and ankles absorbing each landing"),
}

_SENSOR_OPENERS = (
    "The accelerometer shows",
    "The readings reveal",
    "Across the window the sensors show",
    "This segment shows",
)
_LABEL_OPENERS = (
    "During this activity the accelerometer and gyroscope typically show",
    "A phone worn on the body would record",
    "The inertial signals usually show",
    "Sensor readings for this activity generally show",
    "An IMU would typically capture",
)

_STATS_RE = re.compile(r"```json\n(.*?)\n```", re.S)
_LABEL_RE = re.compile(r'activity "([a-z ]+)" \(variant (\d+)\)')


def classify_band(freq_hz: float, regime: str) -> str:
    if regime == "low" or freq_hz <= 0:
        return "static"
    if freq_hz < 1.2:
        return "slow"
    if freq_hz < 2.4:
        return "moderate"
    return "brisk"


def classify_regime(accel_std: float) -> str:
    if accel_std < 0.4:
        return "low"
    if accel_std < 3.0:
        return "medium"
    return "high"


def describe_stats(stats: dict) -> tuple[str, str, str, float]:
    """Map serialized window statistics to (band, regime, rhythm, dominant Hz)."""
    acc = CHANNELS[:3]
    stds = [float(stats[f"std_{c}"]) for c in acc]
    energy = sum(stds) / 3.0
    regime = classify_regime(energy)
    lead = acc[max(range(3), key=lambda i: stds[i])]
    freq = float(stats[f"domfreq_{lead}"])
    band = classify_band(freq, regime)
    period = max(float(stats[f"period_{c}"]) for c in acc)
    rhythm = "rhythmic" if period >= 0.6 and regime != "low" else "irregular"
    return band, regime, rhythm, freq


def _pick(options, digest: bytes, slot: int):
    return options[digest[slot] % len(options)]


class MockBackend:
    """Deterministic template LLM.

    Sensor prompts are answered from the embedded statistics JSON: the text
    names the dominant frequency band and the amplitude regime. A seeded
    fraction of first-attempt answers is deliberately wrong (shifted band and
    regime) so the quality filter has something to repair; answers to
    correction prompts are always faithful. Label prompts are answered from
    :data:`ACTIVITY_PROFILES`.
    """

    def __init__(self, hallucination_rate: float = 0.1, seed: int = 0, backend_id: str = "mock"):
        if not 0.0 <= hallucination_rate <= 1.0:
            raise ValueError("hallucination_rate must lie in [0, 1]")
        self.hallucination_rate = hallucination_rate
        self.seed = seed
        self.backend_id = backend_id
        self.calls = 0
        self._lock = threading.Lock()

    def _digest(self, prompt: str) -> bytes:
        return hashlib.sha256(f"{self.seed}\x00{prompt}".encode("utf-8")).digest()

    def generate(self, prompt: str, params: DecodeParams) -> str:
        with self._lock:
            self.calls += 1
        digest = self._digest(prompt)
        correcting = CORRECTION_INSTRUCTION in prompt
        m = _STATS_RE.search(prompt)
        if m is not None:
            return self._sensor(json.loads(m.group(1)), digest, correcting)
        lm = _LABEL_RE.search(prompt)
        if lm is not None:
            return self._label(lm.group(1).replace(" ", "_"), int(lm.group(2)), digest)
        return f"{RESPONSE_MARKER} The request could not be interpreted."

    def _sensor(self, stats: dict, digest: bytes, correcting: bool) -> str:
        band, regime, rhythm, freq = describe_stats(stats)
        draw = int.from_bytes(digest[:4], "big") / 2**32
        if not correcting and draw < self.hallucination_rate:
            band = BANDS[(BANDS.index(band) + 2) % len(BANDS)]
            regime = REGIMES[(REGIMES.index(regime) + 1 + digest[5] % 2) % len(REGIMES)]
            rhythm = "irregular" if rhythm == "rhythmic" else "rhythmic"
        opener = _pick(_SENSOR_OPENERS, digest, 6)
        freq_note = "" if band == "static" else f" near {max(1, round(freq))} Hz"
        return (f"{RESPONSE_MARKER} {opener} {_REGIME_PHRASE[regime]} and {_BAND_PHRASE[band]}"
                f"{freq_note}; {_RHYTHM_PHRASE[rhythm]}.")

    def _label(self, label: str, variant: int, digest: bytes) -> str:
        if label not in ACTIVITY_PROFILES:
            return f"{RESPONSE_MARKER} {label.replace('_', ' ')} is a human activity."
        band, regime, rhythm, overview, parts = ACTIVITY_PROFILES[label]
        opener = _LABEL_OPENERS[variant % len(_LABEL_OPENERS)]
        return (f"{RESPONSE_MARKER} {overview[0].upper()}{overview[1:]}. {opener} "
                f"{_REGIME_PHRASE[regime]} and {_BAND_PHRASE[band]}; {_RHYTHM_PHRASE[rhythm]}. "
                f"Body parts involved: {parts}.")


def make_backend(kind: str, **options) -> LLMBackend:
    if kind == "mock":
        return MockBackend(hallucination_rate=options.get("hallucination_rate", 0.1),
                           seed=options.get("seed", 0))
    if kind == "replay":
        return ReplayBackend(options["replay_dir"])
    if kind == "http":
        if not options.get("endpoint"):
            raise BackendError("http backend requires an endpoint")
        return HTTPBackend(options["endpoint"], model=options.get("model", "default"),
                           api_key_env=options.get("api_key_env", "LANHAR_API_KEY"),
                           timeout_s=options.get("timeout_s", 60.0))
    raise BackendError(f"unknown backend kind {kind!r}")
