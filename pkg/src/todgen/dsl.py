"""Annotation language for System and Signal turns.

One command per line::

    x0 = book_hotel_room(city="Paris", nights=2)
    x0.check_in_date = "5th of March"
    say(message="Hi")
    confirm(x0)

Signal lines emitted by the mock back-end share the value syntax::

    signal: missing_slots(x0, ["check_in_date"])
    signal: query_result(x1, entities=[entity(id="alarms-1", time="7am")])

Values are immutable tagged dataclasses so that ``Integer(1)``, ``Number(1.0)``
and ``Boolean(True)`` never compare equal.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Union

from .errors import CommandSyntaxError, DanglingVarRef

VAR_RE = re.compile(r"x[0-9]+")
IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
PLACEHOLDER = "<STR>"


# ---------------------------------------------------------------- values


@dataclass(frozen=True)
class Text:
    value: str


@dataclass(frozen=True)
class Integer:
    value: int

    def __post_init__(self):
        if isinstance(self.value, bool) or not isinstance(self.value, int):
            raise TypeError(f"Integer requires an int, got {self.value!r}")


@dataclass(frozen=True)
class Number:
    value: float

    def __post_init__(self):
        if isinstance(self.value, bool) or not isinstance(self.value, (int, float)):
            raise TypeError(f"Number requires a float, got {self.value!r}")
        if not math.isfinite(self.value):
            raise ValueError("Number must be finite")
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True)
class Boolean:
    value: bool


@dataclass(frozen=True)
class VarRef:
    var: str

    def __post_init__(self):
        _check_var(self.var)


@dataclass(frozen=True)
class AttrRef:
    var: str
    slot: str

    def __post_init__(self):
        _check_var(self.var)
        _check_ident(self.slot)


@dataclass(frozen=True)
class ListOf:
    items: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))


@dataclass(frozen=True)
class Placeholder:
    """Unfilled string slot (``<STR>``) produced by the labelling stage."""


@dataclass(frozen=True)
class Entity:
    """Entity record carried by a query result signal."""

    id: str
    fields: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(tuple(f) for f in self.fields))
        _check_unique(name for name, _ in self.fields)

    def get(self, slot: str):
        for name, value in self.fields:
            if name == slot:
                return value
        return None


Value = Union[Text, Integer, Number, Boolean, VarRef, AttrRef, ListOf, Placeholder]


# -------------------------------------------------------------- commands


def _check_var(var: str) -> None:
    if not isinstance(var, str) or not VAR_RE.fullmatch(var):
        raise ValueError(f"invalid variable id {var!r}")


def _check_ident(name: str) -> None:
    if not isinstance(name, str) or not IDENT_RE.fullmatch(name) or VAR_RE.fullmatch(name) or name in ("True", "False"):
        raise ValueError(f"invalid identifier {name!r}")


def _check_unique(names: Iterable[str]) -> None:
    seen = set()
    for name in names:
        if name in seen:
            raise ValueError(f"duplicate argument {name!r}")
        seen.add(name)


def _freeze_args(args) -> tuple:
    frozen = tuple((name, value) for name, value in args)
    for name, _ in frozen:
        _check_ident(name)
    _check_unique(name for name, _ in frozen)
    return frozen


@dataclass(frozen=True)
class IntentCall:
    var: str
    intent: str
    args: tuple = ()

    def __post_init__(self):
        _check_var(self.var)
        _check_ident(self.intent)
        object.__setattr__(self, "args", _freeze_args(self.args))


@dataclass(frozen=True)
class AttrAssign:
    var: str
    slot: str
    value: Value

    def __post_init__(self):
        _check_var(self.var)
        _check_ident(self.slot)


@dataclass(frozen=True)
class Say:
    args: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "args", _freeze_args(self.args))


@dataclass(frozen=True)
class Confirm:
    var: str

    def __post_init__(self):
        _check_var(self.var)


Command = Union[IntentCall, AttrAssign, Say, Confirm]


# --------------------------------------------------------------- signals


@dataclass(frozen=True)
class MissingSlots:
    var: str
    slots: tuple

    def __post_init__(self):
        _check_var(self.var)
        object.__setattr__(self, "slots", tuple(self.slots))
        if not self.slots:
            raise ValueError("MissingSlots requires at least one slot")


@dataclass(frozen=True)
class ConfirmationRequired:
    var: str


@dataclass(frozen=True)
class Performed:
    var: str
    entity_id: str


@dataclass(frozen=True)
class QueryResult:
    var: str
    entities: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "entities", tuple(self.entities))


@dataclass(frozen=True)
class Hint:
    text: str


SignalPayload = Union[MissingSlots, ConfirmationRequired, Performed, QueryResult, Hint]


# ----------------------------------------------------------------- lexer

_TOKEN_SPEC = [
    ("WS", r"\s+"),
    ("STRING", r'"(?:[^"\\]|\\.)*"'),
    ("FLOAT", r"-?[0-9]+(?:\.[0-9]+(?:[eE][+-]?[0-9]+)?|[eE][+-]?[0-9]+)"),
    ("INT", r"-?[0-9]+"),
    ("PLACEHOLDER", re.escape(PLACEHOLDER)),
    ("NAME", r"[A-Za-z_][A-Za-z0-9_]*"),
    ("PUNCT", r"[=().,\[\]:]"),
]
_TOKEN_RE = re.compile("|".join(f"(?P<{name}>{pattern})" for name, pattern in _TOKEN_SPEC))


@dataclass
class _Token:
    kind: str  # STRING FLOAT INT PLACEHOLDER VAR IDENT TRUE FALSE or the punctuation char, or EOF
    text: str
    pos: int  # character index


def _tokenize(line: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(line):
        m = _TOKEN_RE.match(line, pos)
        if m is None:
            raise CommandSyntaxError(f"unexpected character {line[pos]!r}", _byte_offset(line, pos))
        kind = m.lastgroup
        text = m.group()
        if kind == "NAME":
            if VAR_RE.fullmatch(text):
                kind = "VAR"
            elif text == "True":
                kind = "TRUE"
            elif text == "False":
                kind = "FALSE"
            else:
                kind = "IDENT"
        elif kind == "PUNCT":
            kind = text
        if kind != "WS":
            tokens.append(_Token(kind, text, pos))
        pos = m.end()
    tokens.append(_Token("EOF", "", len(line)))
    return tokens


def _byte_offset(line: str, pos: int) -> int:
    return len(line[:pos].encode("utf-8", "surrogatepass"))


_DESCRIBE = {
    "VAR": "variable",
    "IDENT": "identifier",
    "STRING": "string",
    "INT": "integer",
    "FLOAT": "number",
    "EOF": "end of input",
}


class _Parser:
    def __init__(self, line: str, allow_entities: bool = False):
        self.line = line
        self.tokens = _tokenize(line)
        self.i = 0
        self.allow_entities = allow_entities

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def peek(self, k: int = 1) -> _Token:
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def fail(self, expected: Iterable[str], tok: _Token | None = None):
        tok = tok or self.tok
        found = "end of input" if tok.kind == "EOF" else repr(tok.text)
        raise CommandSyntaxError(
            f"unexpected {found}",
            _byte_offset(self.line, tok.pos),
            {_DESCRIBE.get(e, repr(e)) for e in expected},
        )

    def expect(self, kind: str) -> _Token:
        if self.tok.kind != kind:
            self.fail([kind])
        tok = self.tok
        self.i += 1
        return tok

    def accept(self, kind: str) -> _Token | None:
        if self.tok.kind == kind:
            tok = self.tok
            self.i += 1
            return tok
        return None

    def end(self) -> None:
        if self.tok.kind != "EOF":
            self.fail(["EOF"])

    # command := VAR "=" ident "(" kwargs? ")" | VAR "." ident "=" value
    #          | "say" "(" kwargs? ")" | "confirm" "(" VAR ")"
    def command(self) -> Command:
        tok = self.tok
        if tok.kind == "VAR":
            self.i += 1
            if self.accept("="):
                intent = self.expect("IDENT").text
                self.expect("(")
                args = self.kwargs(")")
                self.expect(")")
                return IntentCall(tok.text, intent, args)
            if self.accept("."):
                slot = self.expect("IDENT").text
                self.expect("=")
                return AttrAssign(tok.text, slot, self.value())
            self.fail(["=", "."])
        if tok.kind == "IDENT" and tok.text == "say":
            self.i += 1
            self.expect("(")
            args = self.kwargs(")")
            self.expect(")")
            return Say(args)
        if tok.kind == "IDENT" and tok.text == "confirm":
            self.i += 1
            self.expect("(")
            var = self.expect("VAR").text
            self.expect(")")
            return Confirm(var)
        self.fail(["VAR", "say", "confirm"])

    def kwargs(self, closer: str) -> tuple:
        args = []
        seen = set()
        if self.tok.kind == closer:
            return ()
        while True:
            name_tok = self.expect("IDENT")
            if name_tok.text in seen:
                raise CommandSyntaxError(
                    f"duplicate argument {name_tok.text!r}", _byte_offset(self.line, name_tok.pos)
                )
            seen.add(name_tok.text)
            self.expect("=")
            args.append((name_tok.text, self.value()))
            if not self.accept(","):
                return tuple(args)

    def value(self):
        tok = self.tok
        kind = tok.kind
        if kind == "STRING":
            self.i += 1
            try:
                return Text(json.loads(tok.text, strict=False))
            except json.JSONDecodeError:
                raise CommandSyntaxError("invalid string escape", _byte_offset(self.line, tok.pos)) from None
        if kind == "INT":
            self.i += 1
            return Integer(int(tok.text))
        if kind == "FLOAT":
            self.i += 1
            number = float(tok.text)
            if not math.isfinite(number):
                raise CommandSyntaxError("number out of range", _byte_offset(self.line, tok.pos))
            return Number(number)
        if kind == "TRUE":
            self.i += 1
            return Boolean(True)
        if kind == "FALSE":
            self.i += 1
            return Boolean(False)
        if kind == "PLACEHOLDER":
            self.i += 1
            return Placeholder()
        if kind == "VAR":
            self.i += 1
            if self.accept("."):
                return AttrRef(tok.text, self.expect("IDENT").text)
            return VarRef(tok.text)
        if kind == "[":
            self.i += 1
            items = []
            if not self.accept("]"):
                while True:
                    items.append(self.value())
                    if self.accept("]"):
                        break
                    if not self.accept(","):
                        self.fail([",", "]"])
            return ListOf(tuple(items))
        if kind == "IDENT" and tok.text == "entity" and self.allow_entities:
            return self.entity()
        self.fail(["STRING", "INT", "FLOAT", "True", "False", "VAR", "["])

    def entity(self) -> Entity:
        self.expect("IDENT")
        self.expect("(")
        start = self.tok
        args = self.kwargs(")")
        self.expect(")")
        fields = dict(args)
        entity_id = fields.pop("id", None)
        if not isinstance(entity_id, Text):
            raise CommandSyntaxError("entity requires id=\"...\"", _byte_offset(self.line, start.pos))
        return Entity(entity_id.value, tuple((k, v) for k, v in args if k != "id"))


def parse_command(line: str) -> Command:
    """Parse one annotation line into a Command."""
    parser = _Parser(line)
    cmd = parser.command()
    parser.end()
    return cmd


def parse_commands(text: str | Iterable[str]) -> list[Command]:
    """Parse several lines (blank lines ignored)."""
    lines = text.splitlines() if isinstance(text, str) else text
    return [parse_command(line) for line in lines if line.strip()]


def parse_value(text: str, allow_entities: bool = False):
    parser = _Parser(text, allow_entities=allow_entities)
    value = parser.value()
    parser.end()
    return value


# ------------------------------------------------------------ serializer


def serialize_value(value) -> str:
    if isinstance(value, Text):
        return json.dumps(value.value, ensure_ascii=False)
    if isinstance(value, Boolean):
        return "True" if value.value else "False"
    if isinstance(value, Integer):
        return str(value.value)
    if isinstance(value, Number):
        return repr(value.value)
    if isinstance(value, VarRef):
        return value.var
    if isinstance(value, AttrRef):
        return f"{value.var}.{value.slot}"
    if isinstance(value, ListOf):
        return "[" + ", ".join(serialize_value(v) for v in value.items) + "]"
    if isinstance(value, Placeholder):
        return PLACEHOLDER
    if isinstance(value, Entity):
        return "entity(" + _kwargs_text((("id", Text(value.id)),) + value.fields) + ")"
    raise TypeError(f"not a DSL value: {value!r}")


def _kwargs_text(args) -> str:
    return ", ".join(f"{name}={serialize_value(v)}" for name, v in args)


def serialize_command(cmd: Command) -> str:
    if isinstance(cmd, IntentCall):
        return f"{cmd.var} = {cmd.intent}({_kwargs_text(cmd.args)})"
    if isinstance(cmd, AttrAssign):
        return f"{cmd.var}.{cmd.slot} = {serialize_value(cmd.value)}"
    if isinstance(cmd, Say):
        return f"say({_kwargs_text(cmd.args)})"
    if isinstance(cmd, Confirm):
        return f"confirm({cmd.var})"
    raise TypeError(f"not a command: {cmd!r}")


def serialize_signal(signal: SignalPayload) -> str:
    if isinstance(signal, MissingSlots):
        body = f"missing_slots({signal.var}, {serialize_value(ListOf(tuple(Text(s) for s in signal.slots)))})"
    elif isinstance(signal, ConfirmationRequired):
        body = f"confirmation_required({signal.var})"
    elif isinstance(signal, Performed):
        body = f"performed({signal.var}, id={serialize_value(Text(signal.entity_id))})"
    elif isinstance(signal, QueryResult):
        body = f"query_result({signal.var}, entities={serialize_value(ListOf(signal.entities))})"
    elif isinstance(signal, Hint):
        body = f"hint({serialize_value(Text(signal.text))})"
    else:
        raise TypeError(f"not a signal: {signal!r}")
    return "signal: " + body


def parse_signal(line: str) -> SignalPayload:
    p = _Parser(line, allow_entities=True)
    head = p.expect("IDENT")
    if head.text != "signal":
        p.fail(["signal"], head)
    p.expect(":")
    name_tok = p.expect("IDENT")
    name = name_tok.text
    p.expect("(")
    if name == "hint":
        text = p.value()
        if not isinstance(text, Text):
            p.fail(["STRING"], p.tokens[p.i - 1])
        result: SignalPayload = Hint(text.value)
    elif name in ("missing_slots", "confirmation_required", "performed", "query_result"):
        var = p.expect("VAR").text
        if name == "confirmation_required":
            result = ConfirmationRequired(var)
        elif name == "missing_slots":
            p.expect(",")
            start = p.tok
            slots = p.value()
            if not isinstance(slots, ListOf) or not slots.items or not all(isinstance(s, Text) for s in slots.items):
                raise CommandSyntaxError("missing_slots expects a non-empty list of strings", _byte_offset(line, start.pos))
            result = MissingSlots(var, tuple(s.value for s in slots.items))
        else:
            p.expect(",")
            key = p.expect("IDENT")
            wanted = "id" if name == "performed" else "entities"
            if key.text != wanted:
                p.fail([wanted], key)
            p.expect("=")
            start = p.tok
            value = p.value()
            if name == "performed":
                if not isinstance(value, Text):
                    raise CommandSyntaxError("performed id must be a string", _byte_offset(line, start.pos))
                result = Performed(var, value.value)
            else:
                if not isinstance(value, ListOf) or not all(isinstance(e, Entity) for e in value.items):
                    raise CommandSyntaxError("entities must be a list of entity(...)", _byte_offset(line, start.pos))
                result = QueryResult(var, value.items)
    else:
        p.fail(["missing_slots", "confirmation_required", "performed", "query_result", "hint"], name_tok)
    p.expect(")")
    p.end()
    return result


# ---------------------------------------------------------- canonicalize


def value_vars(value) -> list[str]:
    """Variables referenced by a value, in textual order."""
    if isinstance(value, (VarRef, AttrRef)):
        return [value.var]
    if isinstance(value, ListOf):
        return [v for item in value.items for v in value_vars(item)]
    return []


def _rename_value(value, mapping: dict[str, str]):
    if isinstance(value, VarRef):
        return VarRef(mapping[value.var])
    if isinstance(value, AttrRef):
        return AttrRef(mapping[value.var], value.slot)
    if isinstance(value, ListOf):
        return ListOf(tuple(_rename_value(v, mapping) for v in value.items))
    if isinstance(value, Number) and value.value == 0.0:
        return Number(0.0)  # -0.0 spelling
    return value


def canonicalize(cmds: Iterable[Command], known: Iterable[str] = ()) -> list[Command]:
    """Renumber variables in first-use order and sort keyword arguments.

    Variables in ``known`` (defined earlier in the conversation) keep their
    names; fresh variables are numbered x0, x1, ... skipping known ids.  A value
    may only reference a variable that is known or has already been used as a
    command target.
    """
    known = set(known)
    mapping = {v: v for v in known}
    taken = set(known)
    counter = 0

    def introduce(var: str) -> None:
        nonlocal counter
        if var in mapping:
            return
        while f"x{counter}" in taken:
            counter += 1
        mapping[var] = f"x{counter}"
        taken.add(f"x{counter}")

    def rename(value):
        for var in value_vars(value):
            if var not in mapping:
                raise DanglingVarRef(var)
        return _rename_value(value, mapping)

    out: list[Command] = []
    for cmd in cmds:
        if isinstance(cmd, IntentCall):
            args = [(name, rename(v)) for name, v in cmd.args]
            introduce(cmd.var)
            out.append(IntentCall(mapping[cmd.var], cmd.intent, tuple(sorted(args, key=lambda a: a[0]))))
        elif isinstance(cmd, AttrAssign):
            introduce(cmd.var)
            out.append(AttrAssign(mapping[cmd.var], cmd.slot, rename(cmd.value)))
        elif isinstance(cmd, Say):
            args = [(name, rename(v)) for name, v in cmd.args]
            out.append(Say(tuple(sorted(args, key=lambda a: a[0]))))
        elif isinstance(cmd, Confirm):
            introduce(cmd.var)
            out.append(Confirm(mapping[cmd.var]))
        else:
            raise TypeError(f"not a command: {cmd!r}")
    return out


def commands_equal(a: Iterable[Command], b: Iterable[Command], known: Iterable[str] = ()) -> bool:
    known = tuple(known)
    ca = canonicalize(a, known)
    cb = canonicalize(b, known)
    return len(ca) == len(cb) and all(x == y for x, y in zip(ca, cb))


def defined_vars(cmds: Iterable[Command]) -> set[str]:
    return {c.var for c in cmds if isinstance(c, IntentCall)}


def command_values(cmd: Command) -> list[tuple[str, object]]:
    """(slot, value) pairs that a command assigns."""
    if isinstance(cmd, IntentCall):
        return list(cmd.args)
    if isinstance(cmd, AttrAssign):
        return [(cmd.slot, cmd.value)]
    return []


def has_placeholder(value) -> bool:
    if isinstance(value, Placeholder):
        return True
    if isinstance(value, ListOf):
        return any(has_placeholder(v) for v in value.items)
    return False
