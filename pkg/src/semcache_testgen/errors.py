"""Exception hierarchy shared across the package."""

from __future__ import annotations


class SemcacheError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(SemcacheError, ValueError):
    """A value or file violates a data-model invariant."""


class EmbeddingError(SemcacheError):
    """Text could not be embedded (e.g. it contains no tokens)."""


class ProviderError(SemcacheError):
    """A remote service call failed.

    ``attempts`` is the number of requests actually sent before giving up.
    """

    def __init__(self, message: str, attempts: int = 1, status: int | None = None):
        super().__init__(message)
        self.attempts = attempts
        self.status = status


class TransientProviderError(ProviderError):
    """Failure worth retrying: transport errors, HTTP 5xx and 429."""


class ContractViolation(SemcacheError):
    """A remote service answered with a payload that breaks its contract."""


class ParseError(SemcacheError, ValueError):
    """No JSON array of strings could be extracted from a model response."""

    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class ScriptMissError(SemcacheError, KeyError):
    """The scripted LLM provider has no response for a request."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "no scripted response"


class TemplateError(SemcacheError, ValueError):
    """A prompt template references an unknown placeholder."""


class PipelineError(SemcacheError):
    """Fatal pipeline condition (oversize document, bad preconditions)."""


class ReplayError(SemcacheError):
    """Replay aborted; ``partial_records`` were produced before the failure
    and must not be counted."""

    def __init__(self, message: str, partial_records: list):
        super().__init__(message)
        self.partial_records = partial_records
