"""Exception hierarchy shared across the pipeline."""

from __future__ import annotations


class TodgenError(Exception):
    """Base class for every error raised by this package."""


class ProviderError(TodgenError):
    """Transport, timeout, or empty-reply failure from a language-model provider."""


class ParseError(TodgenError, ValueError):
    """A provider reply (or stored record) does not follow its output format."""


class CommandSyntaxError(ParseError):
    """Malformed annotation command.

    ``offset`` is a byte offset into the UTF-8 encoded input; ``expected`` is the
    set of token descriptions that would have been accepted there.
    """

    def __init__(self, message: str, offset: int, expected: frozenset[str] | set[str] = frozenset()):
        self.offset = offset
        self.expected = frozenset(expected)
        detail = f"{message} at offset {offset}"
        if self.expected:
            detail += f" (expected one of: {', '.join(sorted(self.expected))})"
        super().__init__(detail)


class DanglingVarRef(TodgenError):
    def __init__(self, var: str):
        self.var = var
        super().__init__(f"reference to undefined variable {var}")


class TypeMismatch(TodgenError, ValueError):
    """A value does not conform to its slot's declared type (or the slot is unknown)."""


class UnknownIntent(TodgenError, KeyError):
    def __str__(self) -> str:
        return f"unknown intent {self.args[0]!r}" if self.args else "unknown intent"


class UnknownVariable(TodgenError, KeyError):
    def __str__(self) -> str:
        return f"unknown variable {self.args[0]!r}" if self.args else "unknown variable"


class InvalidTransition(TodgenError):
    """Command not permitted in the intent session's current state."""


class MissingToken(TodgenError):
    """A planned phenomenon was due but the user reply lacked its special token."""


class SpanViolation(TodgenError):
    """An extracted string value is not a span of the user utterance."""


class AlignmentError(TodgenError):
    """Predictions are not aligned one-to-one with gold system points."""


class SchemaError(TodgenError, ValueError):
    """Malformed record in a dataset or catalog file."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ConfigError(TodgenError, ValueError):
    pass


class AbortedConversation(TodgenError):
    """Conversation generation stopped; ``prefix`` holds the salvageable turns."""

    def __init__(self, reason: str, prefix: list, detail: str = "", turn_index: int | None = None):
        self.reason = reason
        self.prefix = prefix
        self.detail = detail
        self.turn_index = turn_index
        super().__init__(f"{reason}: {detail}" if detail else reason)
