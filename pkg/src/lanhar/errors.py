"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class LanharError(Exception):
    """Base class; ``code`` is the short machine-readable tag the CLI prints."""

    code = "error"


class ArgumentError(LanharError, ValueError):
    code = "argument"


class LoadError(LanharError):
    code = "load"


class ParseError(LanharError):
    code = "parse"

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class LabelError(LanharError, ValueError):
    code = "label"

    def __init__(self, raw: str, message: str | None = None):
        super().__init__(message or f"unmapped activity label {raw!r}")
        self.raw = raw


class UnsupportedUpsampleError(LanharError, ValueError):
    code = "upsample"


class StateError(LanharError):
    code = "state"


class BackendError(LanharError):
    code = "backend"


class TransientBackendError(BackendError):
    """Raised by backends for failures worth retrying (timeouts, 429, 5xx)."""

    code = "backend_transient"


class NumericalError(LanharError):
    code = "numerical"

    def __init__(self, message: str, component: str | None = None):
        super().__init__(message)
        self.component = component


class UniquenessError(LanharError, ValueError):
    code = "uniqueness"


class ConfigError(LanharError):
    code = "config"

    def __init__(self, message: str, keys: list[str] | None = None):
        super().__init__(message)
        self.keys = keys or []


class DependencyError(LanharError):
    code = "dependency"

    def __init__(self, artifact: str, hint: str | None = None):
        msg = f"missing upstream artifact: {artifact}"
        if hint:
            msg += f" (run `{hint}` first)"
        super().__init__(msg)
        self.artifact = artifact


class FingerprintMismatchError(LanharError):
    code = "fingerprint"
