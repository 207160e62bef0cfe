from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from strategies import command_lists, commands
from todgen.dsl import (
    AttrAssign,
    AttrRef,
    Boolean,
    Confirm,
    ConfirmationRequired,
    Entity,
    Hint,
    Integer,
    IntentCall,
    ListOf,
    MissingSlots,
    Number,
    Performed,
    Placeholder,
    QueryResult,
    Say,
    Text,
    VarRef,
    canonicalize,
    commands_equal,
    parse_command,
    parse_commands,
    parse_signal,
    parse_value,
    serialize_command,
    serialize_signal,
)
from todgen.errors import CommandSyntaxError, DanglingVarRef


def test_parse_intent_call():
    cmd = parse_command('x0 = book_hotel_room(city="Paris")')
    assert cmd == IntentCall("x0", "book_hotel_room", (("city", Text("Paris")),))


def test_parse_attr_assign():
    assert parse_command('x0.check_in_date = "5th of March"') == AttrAssign("x0", "check_in_date", Text("5th of March"))


def test_parse_is_whitespace_insensitive():
    assert parse_command('x0=f(a=1,b=[True , x1.c])') == parse_command('x0 = f( a = 1 , b = [ True, x1.c ] )')


def test_parse_value_kinds():
    cmd = parse_command('x2 = f(a=1, b=-2.5, c=True, d=False, e=x0, g=x0.time, h=[1, "two"], i=<STR>, j=[])')
    assert dict(cmd.args) == {
        "a": Integer(1),
        "b": Number(-2.5),
        "c": Boolean(True),
        "d": Boolean(False),
        "e": VarRef("x0"),
        "g": AttrRef("x0", "time"),
        "h": ListOf((Integer(1), Text("two"))),
        "i": Placeholder(),
        "j": ListOf(()),
    }


def test_string_escapes_round_trip():
    cmd = AttrAssign("x0", "note", Text('say "hi"\n\\ café'))
    line = serialize_command(cmd)
    assert "\n" not in line
    assert parse_command(line) == cmd


def test_syntax_error_offset_and_expected():
    with pytest.raises(CommandSyntaxError) as exc:
        parse_command("x0 = = bad(")
    assert exc.value.offset == 5
    assert "identifier" in exc.value.expected or "IDENT" in exc.value.expected


@pytest.mark.parametrize(
    "line",
    ["", "x0", "x0 = f(", "say(1)", "x0 = f(a=1, a=2)", 'x0.a = "unterminated', "confirm(foo)", "x0 = f(a=1) trailing", "y0 = f()"],
)
def test_malformed_lines_raise(line):
    with pytest.raises(CommandSyntaxError) as exc:
        parse_command(line)
    assert 0 <= exc.value.offset <= len(line.encode("utf-8"))


def test_offsets_count_bytes():
    with pytest.raises(CommandSyntaxError) as exc:
        parse_command('say(m="é") ?')
    assert exc.value.offset == len('say(m="é") '.encode("utf-8"))


def test_serialize_examples():
    assert serialize_command(Say((("message", Text("Hi")),))) == 'say(message="Hi")'
    assert serialize_command(AttrAssign("x1", "rating", Integer(9))) == "x1.rating = 9"
    assert serialize_command(Confirm("x3")) == "confirm(x3)"
    assert serialize_command(Say()) == "say()"
    assert serialize_command(IntentCall("x0", "find_alarms")) == "x0 = find_alarms()"


def test_parse_commands_skips_blank_lines():
    assert parse_commands("say()\n\nconfirm(x0)\n") == [Say(), Confirm("x0")]


def test_canonicalize_renumbers_and_sorts():
    cmds = parse_commands(['x3 = set_alarm(time="7am", label="gym")', "x7 = f(ref=x3)", "confirm(x3)"])
    assert [serialize_command(c) for c in canonicalize(cmds)] == [
        'x0 = set_alarm(label="gym", time="7am")',
        "x1 = f(ref=x0)",
        "confirm(x0)",
    ]


def test_canonicalize_keeps_known_vars_and_skips_their_ids():
    cmds = parse_commands(['x5 = f(a=1)', 'x0.b = x5.a'])
    out = canonicalize(cmds, known=["x0"])
    assert out == [IntentCall("x1", "f", (("a", Integer(1)),)), AttrAssign("x0", "b", AttrRef("x1", "a"))]


def test_canonicalize_dangling_reference():
    with pytest.raises(DanglingVarRef):
        canonicalize([parse_command("x0.time = x9.time")])


def test_canonicalize_normalises_negative_zero():
    assert canonicalize([AttrAssign("x0", "a", Number(-0.0))], ["x0"]) == [AttrAssign("x0", "a", Number(0.0))]
    assert serialize_command(canonicalize([AttrAssign("x0", "a", Number(-0.0))], ["x0"])[0]) == "x0.a = 0.0"


def test_commands_equal_examples():
    a = parse_commands(['x0 = set_alarm(time="7am", label="gym")'])
    b = parse_commands(['x4 = set_alarm(label="gym", time="7am")'])
    c = parse_commands(['x0 = set_alarm(time="8am", label="gym")'])
    assert commands_equal(a, a)
    assert commands_equal(a, b)
    assert not commands_equal(a, c)
    assert not commands_equal(a, a + [Say()])


def test_signal_round_trip():
    signals = [
        MissingSlots("x0", ("check_in_date",)),
        ConfirmationRequired("x1"),
        Performed("x0", "alarms-1"),
        QueryResult("x2", (Entity("alarms-1", (("time", Text("7am")),)), Entity("alarms-2", ()))),
        QueryResult("x2", ()),
        Hint("ask about the date"),
    ]
    for s in signals:
        assert parse_signal(serialize_signal(s)) == s
    assert serialize_signal(MissingSlots("x0", ("check_in_date",))) == 'signal: missing_slots(x0, ["check_in_date"])'


@pytest.mark.parametrize(
    "line",
    ["signal: missing_slots(x0, [])", "signal: performed(x0, id=3)", "signal: nope(x0)", "missing_slots(x0)", 'signal: hint(1)'],
)
def test_bad_signals(line):
    with pytest.raises(CommandSyntaxError):
        parse_signal(line)


def test_entities_only_allowed_in_signals():
    with pytest.raises(CommandSyntaxError):
        parse_value('entity(id="a-1")')
    assert parse_value('entity(id="a-1", n=2)', allow_entities=True) == Entity("a-1", (("n", Integer(2)),))


def test_constructor_invariants():
    with pytest.raises(ValueError):
        IntentCall("y0", "f")
    with pytest.raises(ValueError):
        IntentCall("x0", "f", (("a", Integer(1)), ("a", Integer(2))))
    with pytest.raises(ValueError):
        AttrAssign("x0", "x1", Integer(1))
    with pytest.raises(TypeError):
        Integer(True)
    with pytest.raises(ValueError):
        Number(float("inf"))


@settings(max_examples=300)
@given(commands)
def test_round_trip_property(cmd):
    assert parse_command(serialize_command(cmd)) == cmd


@settings(max_examples=200)
@given(command_lists)
def test_canonicalize_idempotent_and_count_preserving(cmds):
    try:
        once = canonicalize(cmds)
    except DanglingVarRef:
        return
    assert len(once) == len(cmds)
    assert canonicalize(once) == once


@settings(max_examples=200)
@given(command_lists, st.permutations(list(range(13))))
def test_commands_equal_ignores_renaming(cmds, perm):
    mapping = {f"x{i}": f"x{p}" for i, p in enumerate(perm)}

    def rn(value):
        if isinstance(value, VarRef):
            return VarRef(mapping[value.var])
        if isinstance(value, AttrRef):
            return AttrRef(mapping[value.var], value.slot)
        if isinstance(value, ListOf):
            return ListOf(tuple(rn(v) for v in value.items))
        return value

    renamed = []
    for c in cmds:
        if isinstance(c, IntentCall):
            renamed.append(IntentCall(mapping[c.var], c.intent, tuple((k, rn(v)) for k, v in reversed(c.args))))
        elif isinstance(c, AttrAssign):
            renamed.append(AttrAssign(mapping[c.var], c.slot, rn(c.value)))
        elif isinstance(c, Confirm):
            renamed.append(Confirm(mapping[c.var]))
        else:
            renamed.append(Say(tuple((k, rn(v)) for k, v in c.args)))
    try:
        canonicalize(cmds)
    except DanglingVarRef:
        return
    assert commands_equal(cmds, renamed)
    assert commands_equal(renamed, cmds)


@settings(max_examples=200)
@given(st.text(max_size=30))
def test_syntax_error_offset_within_input(line):
    try:
        parse_command(line)
    except CommandSyntaxError as exc:
        assert 0 <= exc.offset <= len(line.encode("utf-8", "surrogatepass"))
