"""Structured prompt construction for sensor windows and activity labels."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ..data import CANONICAL_LABELS, CHANNELS, IMUWindow
from ..errors import ArgumentError, LabelError
from ..stats import WindowStats

SECTION_ORDER = ("data_introduction", "data_analysis", "knowledge", "task_introduction")
SECTION_TITLES = {
    "data_introduction": "Data introduction",
    "data_analysis": "Data analysis",
    "knowledge": "Knowledge",
    "task_introduction": "Task introduction",
}
CORRECTION_INSTRUCTION = (
    "This is your previous response to the task. Please analyze it step by step to identify any "
    "logical errors, inconsistencies with real-world knowledge, or discrepancies with the input "
    "data. Provide a corrected response according to the required format."
)
RESPONSE_MARKER = "Interpretation:"
MAX_RAW_SAMPLES = 120

_CHANNEL_MEANING = {
    "ax": "accelerometer x-axis (m/s^2)",
    "ay": "accelerometer y-axis (m/s^2)",
    "az": "accelerometer z-axis (m/s^2)",
    "gx": "gyroscope x-axis (rad/s)",
    "gy": "gyroscope y-axis (rad/s)",
    "gz": "gyroscope z-axis (rad/s)",
}

_SENSOR_FORMAT = (
    f"Answer with a single paragraph that starts with '{RESPONSE_MARKER}'. Describe the dominant "
    "frequency band, the amplitude regime, the rhythm of the signal and the body movement it "
    "suggests. Do not exceed 80 words."
)

_LABEL_STYLES = (
    "Write a concise, factual description",
    "Write the description as a coach would explain it to a trainee",
    "Write the description from the viewpoint of a biomechanics researcher",
    "Write a plain-language description suitable for a general audience",
    "Write the description focusing on what a wrist- or pocket-worn phone would record",
)


@dataclass(frozen=True)
class PromptBundle:
    sections: tuple[tuple[str, str], ...]
    target_kind: str  # "sensor" | "label"
    target_id: str
    attempt: int = 1
    request: str | None = None  # original task text, carried through regenerations

    def __post_init__(self):
        if self.target_kind not in ("sensor", "label"):
            raise ArgumentError(f"unknown target_kind {self.target_kind!r}")
        names = [n for n, _ in self.sections]
        if self.target_kind == "sensor" and tuple(names) != SECTION_ORDER:
            raise ArgumentError(f"sensor prompt sections must be {SECTION_ORDER}, got {names}")
        if self.target_kind == "label" and tuple(names) != ("task_introduction",):
            raise ArgumentError("label prompt must contain exactly one task_introduction section")

    @property
    def text(self) -> str:
        return "\n\n".join(f"### {SECTION_TITLES[name]}\n{body}" for name, body in self.sections)

    @property
    def content_hash(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    def section(self, name: str) -> str:
        for n, body in self.sections:
            if n == name:
                return body
        raise KeyError(name)


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def _raw_block(window: IMUWindow) -> str:
    data = window.data
    n = data.shape[0]
    if n > MAX_RAW_SAMPLES:
        idx = np.round(np.linspace(0, n - 1, MAX_RAW_SAMPLES)).astype(int)
        data = data[idx]
        head = (f"Raw sequence ({n} samples per channel, summarized to {MAX_RAW_SAMPLES} evenly "
                "spaced samples):")
    else:
        head = f"Raw sequence ({n} samples per channel):"
    lines = [head]
    for c, ch in enumerate(CHANNELS):
        lines.append(f"{ch}: " + ", ".join(_fmt(v) for v in data[:, c]))
    return "\n".join(lines)


def build_sensor_prompt(window: IMUWindow, stats: WindowStats,
                        knowledge_snippets: list[str] | tuple[str, ...] = ()) -> PromptBundle:
    rate = stats.rate_hz
    duration = window.window_len / rate
    intro = (
        f"The data below is a {duration:g}-second segment recorded by the inertial measurement unit "
        f"of a smartphone or wearable carried by a person during daily activities. It has six "
        f"channels sampled at {rate:g} Hz: "
        + "; ".join(f"{ch} = {_CHANNEL_MEANING[ch]}" for ch in CHANNELS)
        + ". Accelerometer readings include gravity, so a device at rest reads about 9.81 m/s^2 "
        "along the axis aligned with gravity."
    )
    s = stats
    analysis_lines = [
        "Statistics of each channel (JSON):",
        "```json",
        stats.to_json(),
        "```",
        "Amplitude analysis: " + ", ".join(f"{ch} {_fmt(a)}" for ch, a in zip(CHANNELS, s.amplitude)),
        "Frequency analysis (dominant frequency, Hz): "
        + ", ".join(f"{ch} {_fmt(f)}" for ch, f in zip(CHANNELS, s.dominant_freq_hz)),
        "Time series analysis (periodicity score in [0, 1]): "
        + ", ".join(f"{ch} {_fmt(p)}" for ch, p in zip(CHANNELS, s.periodicity)),
        "Statistical measures (mean / std / max / min): "
        + "; ".join(f"{ch} {_fmt(m)} / {_fmt(d)} / {_fmt(hi)} / {_fmt(lo)}"
                    for ch, m, d, hi, lo in zip(CHANNELS, s.mean, s.std, s.max, s.min)),
        _raw_block(window),
    ]
    if knowledge_snippets:
        knowledge = "\n".join(f"- {k.strip()}" for k in knowledge_snippets)
    else:
        knowledge = "- No additional background knowledge was supplied."
    task = ("Using the analyses and knowledge above, interpret the sensor readings step by step "
            "and describe what the person's body is doing. " + _SENSOR_FORMAT)
    sections = (("data_introduction", intro), ("data_analysis", "\n".join(analysis_lines)),
                ("knowledge", knowledge), ("task_introduction", task))
    return PromptBundle(sections=sections, target_kind="sensor", target_id=window.window_id)


def build_label_prompt(label: str, variant_seed: int = 0) -> PromptBundle:
    if label not in CANONICAL_LABELS:
        raise LabelError(label, f"{label!r} is not a canonical activity label")
    style = _LABEL_STYLES[variant_seed % len(_LABEL_STYLES)]
    pretty = label.replace("_", " ")
    task = (
        f'Generate a description for the activity "{pretty}" (variant {variant_seed}). '
        f"{style}, phrased differently from other variants. The description must cover three "
        "aspects: (1) a general overview of the activity; (2) the states or patterns an "
        "accelerometer and gyroscope would detect during the activity, including its dominant "
        "frequency band and amplitude regime; (3) the body parts involved in performing it. "
        f"Answer with a single paragraph that starts with '{RESPONSE_MARKER}' and stays under 80 words."
    )
    return PromptBundle(sections=(("task_introduction", task),), target_kind="label",
                        target_id=f"{label}#{variant_seed}")


def build_regen_prompt(original: PromptBundle, previous_response: str) -> PromptBundle:
    """Swap the task section for the correction instruction, keeping the data sections."""
    if not previous_response or not previous_response.strip():
        raise ArgumentError("previous_response must be non-empty")
    request = original.request or original.section("task_introduction")
    task = (f"Original task: {request}\nPrevious response:\n<<<\n{previous_response.strip()}\n>>>\n"
            f"{CORRECTION_INSTRUCTION}")
    sections = tuple((n, task if n == "task_introduction" else body) for n, body in original.sections)
    return PromptBundle(sections=sections, target_kind=original.target_kind,
                        target_id=original.target_id, attempt=original.attempt + 1, request=request)


def parse_response(text: str) -> str:
    """Extract the interpretation paragraph; raises ``ParseError`` on format violations."""
    from ..errors import ParseError

    if text is None or not text.strip():
        raise ParseError("empty LLM response")
    idx = text.find(RESPONSE_MARKER)
    if idx < 0:
        raise ParseError(f"response lacks the {RESPONSE_MARKER!r} marker")
    body = " ".join(text[idx + len(RESPONSE_MARKER):].split())
    if not body:
        raise ParseError("response has an empty interpretation")
    return body
