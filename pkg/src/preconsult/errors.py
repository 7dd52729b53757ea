"""Exception hierarchy shared across the engine.

Errors are split by recovery semantics: input/ordering/config errors are
programming or data mistakes and never retried; gateway errors carry a
``retryable`` flag; role-parse errors keep the raw model text for forensics.
"""

from __future__ import annotations


class PreconsultError(Exception):
    """Base class for all engine errors."""


class InputError(PreconsultError):
    """An argument violates an operation's preconditions."""


class OrderingError(InputError):
    """A turn or record update arrived out of round order."""


class ConfigError(PreconsultError):
    """Invalid configuration value."""


class StateError(PreconsultError):
    """Operation called in the wrong session lifecycle state."""


class SchemaError(PreconsultError):
    """An asset or data file does not match its documented schema."""


class GatewayError(PreconsultError):
    """Base class for model-backend failures."""

    retryable = False


class BackendTimeoutError(GatewayError):
    retryable = True


class ProtocolError(GatewayError):
    """The endpoint replied, but not in the expected wire shape."""


class BackendUnavailableError(GatewayError):
    """Transient failures persisted past the retry budget."""

    def __init__(self, message: str, attempts: int = 0):
        super().__init__(message)
        self.attempts = attempts


class ScriptMissError(GatewayError):
    """Scripted backend has no recorded reply for a request."""

    def __init__(self, role_name: str, fingerprint: str):
        super().__init__(
            f"no scripted reply for role {role_name!r} with fingerprint {fingerprint}"
        )
        self.role_name = role_name
        self.fingerprint = fingerprint


class RoleParseError(PreconsultError):
    """A role's model reply stayed unusable after repair retries."""

    def __init__(self, role_name: str, reason: str, raw_text: str = "", attempts: int = 1):
        super().__init__(f"{role_name}: {reason}")
        self.role_name = role_name
        self.reason = reason
        self.raw_text = raw_text
        self.attempts = attempts


class EvaluationError(PreconsultError):
    """Judge output could not be turned into a complete report."""


class SessionError(PreconsultError):
    """A round could not run to completion; session state is unchanged."""

    def __init__(self, message: str, retryable: bool = False):
        super().__init__(message)
        self.retryable = retryable
