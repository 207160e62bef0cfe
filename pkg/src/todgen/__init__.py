"""Schema-driven generation of task-oriented dialogues with labelled system commands."""

from __future__ import annotations

from .dsl import canonicalize, commands_equal, parse_command, parse_commands, serialize_command
from .errors import AbortedConversation, ParseError, ProviderError, TodgenError
from .providers import RemoteProvider, ScriptedProvider

__version__ = "0.1.0"

__all__ = [
    "AbortedConversation",
    "ParseError",
    "ProviderError",
    "RemoteProvider",
    "ScriptedProvider",
    "TodgenError",
    "canonicalize",
    "commands_equal",
    "parse_command",
    "parse_commands",
    "serialize_command",
]
