from .backends import DecodeParams, HTTPBackend, LLMBackend, MockBackend, ReplayBackend, make_backend
from .cache import ResponseCache
from .prompts import (
    CORRECTION_INSTRUCTION,
    PromptBundle,
    build_label_prompt,
    build_regen_prompt,
    build_sensor_prompt,
    parse_response,
)
from .service import SemanticInterpretation, generate_interpretation, generate_many

__all__ = [
    "CORRECTION_INSTRUCTION",
    "DecodeParams",
    "HTTPBackend",
    "LLMBackend",
    "MockBackend",
    "PromptBundle",
    "ReplayBackend",
    "ResponseCache",
    "SemanticInterpretation",
    "build_label_prompt",
    "build_regen_prompt",
    "build_sensor_prompt",
    "generate_interpretation",
    "generate_many",
    "make_backend",
    "parse_response",
]
