from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from todgen.backend import (
    AWAITING_CONFIRMATION,
    CANCELLED,
    COLLECTING,
    PERFORMED,
    BackendSession,
    EntityStore,
    query_filter,
)
from todgen.dsl import (
    AttrAssign,
    Confirm,
    ConfirmationRequired,
    Entity,
    IntentCall,
    Integer,
    MissingSlots,
    Performed,
    QueryResult,
    Say,
    Text,
    parse_command,
)
from todgen.errors import InvalidTransition, TodgenError, TypeMismatch, UnknownIntent, UnknownVariable
from todgen.schema import IntentSchema, SlotSpec, build_catalog

HOTEL = IntentSchema(
    "book_hotel_room",
    "travel",
    "transactional",
    (SlotSpec("city", "text", True), SlotSpec("check_in_date", "date_text", True), SlotSpec("nights", "integer")),
    "hotel_bookings",
    True,
)
ALARM = IntentSchema("set_alarm", "alarms", "transactional", (SlotSpec("time", "time_text", True),), "alarms", False)
CATALOG = build_catalog([HOTEL, ALARM])


def test_missing_then_confirmation_then_performed():
    b = BackendSession(CATALOG)
    assert b.apply_command(parse_command('x0 = book_hotel_room(city="Paris")')) == MissingSlots("x0", ("check_in_date",))
    assert b.sessions["x0"].state == COLLECTING
    assert b.apply_command(parse_command('x0.check_in_date = "5th of March"')) == ConfirmationRequired("x0")
    assert b.sessions["x0"].state == AWAITING_CONFIRMATION
    assert b.apply_command(Confirm("x0")) == Performed("x0", "hotel_bookings-1")
    assert b.sessions["x0"].state == PERFORMED
    with pytest.raises(InvalidTransition):
        b.apply_command(Confirm("x0"))
    with pytest.raises(InvalidTransition):
        b.apply_command(parse_command('x0.city = "Rome"'))


def test_no_confirmation_performs_directly():
    b = BackendSession(CATALOG)
    assert b.apply_command(parse_command('x0 = set_alarm(time="7am")')) == Performed("x0", "alarms-1")
    assert b.apply_command(parse_command('x1 = set_alarm(time="8am")')) == Performed("x1", "alarms-2")


def test_query_over_store():
    store = EntityStore({"alarms": [Entity("alarms-1", (("time", Text("7am")),)), Entity("alarms-2", (("time", Text("8am")),))]})
    b = BackendSession(CATALOG, store)
    result = b.apply_command(parse_command("x0 = find_alarms()"))
    assert isinstance(result, QueryResult) and len(result.entities) == 2
    result = b.apply_command(parse_command('x1 = find_alarms(time=" 7AM ")'))
    assert [e.id for e in result.entities] == ["alarms-1"]
    assert b.apply_command(parse_command('x2 = find_alarms(time="noon")')) == QueryResult("x2", ())
    # refining a query re-runs it
    assert b.apply_command(parse_command('x0.time = "8am"')).entities[0].id == "alarms-2"


def test_store_is_copied():
    store = EntityStore()
    b = BackendSession(CATALOG, store)
    b.apply_command(parse_command('x0 = set_alarm(time="7am")'))
    assert store.entities == {}
    assert [e.id for e in b.store.entities["alarms"]] == ["alarms-1"]


def test_performed_entities_are_queryable():
    b = BackendSession(CATALOG)
    b.apply_command(parse_command('x0 = set_alarm(time="7am")'))
    assert len(b.apply_command(parse_command("x1 = find_alarms()")).entities) == 1


def test_query_filter_linear_scan():
    store = EntityStore(
        {
            "hotel_bookings": [
                Entity("hotel_bookings-1", (("city", Text("Paris")), ("nights", Integer(2)))),
                Entity("hotel_bookings-2", (("city", Text("Rome")), ("nights", Integer(2)))),
                Entity("hotel_bookings-3", (("city", Text("Oslo")),)),
            ]
        }
    )
    query = CATALOG["find_hotel_bookings"]
    assert len(query_filter(store, query, [])) == 3
    assert [e.id for e in query_filter(store, query, [("city", Text("rome"))])] == ["hotel_bookings-2"]
    assert [e.id for e in query_filter(store, query, [("nights", Integer(2))])] == ["hotel_bookings-1", "hotel_bookings-2"]
    assert query_filter(store, query, [("city", Text("Lima"))]) == []
    with pytest.raises(TypeMismatch):
        query_filter(store, query, [("nights", Text("two"))])
    with pytest.raises(ValueError):
        query_filter(store, HOTEL, [])


def test_errors():
    b = BackendSession(CATALOG)
    with pytest.raises(UnknownIntent):
        b.apply_command(parse_command("x0 = fly_to_moon()"))
    with pytest.raises(UnknownVariable):
        b.apply_command(parse_command('x5.city = "Paris"'))
    with pytest.raises(TypeMismatch):
        b.apply_command(parse_command('x0 = book_hotel_room(nights="two")'))
    with pytest.raises(TypeMismatch):
        b.apply_command(parse_command('x0 = book_hotel_room(stars=5)'))
    with pytest.raises(TypeMismatch):
        b.apply_command(parse_command("x0 = book_hotel_room(city=<STR>)"))
    b.apply_command(parse_command('x0 = book_hotel_room(city="Paris")'))
    with pytest.raises(InvalidTransition):
        b.apply_command(parse_command('x0 = set_alarm(time="7am")'))
    with pytest.raises(InvalidTransition):
        b.apply_command(Confirm("x0"))


def test_attr_ref_resolves_to_value():
    b = BackendSession(CATALOG)
    b.apply_command(parse_command('x0 = book_hotel_room(city="Paris")'))
    b.apply_command(parse_command("x1 = find_hotel_bookings(city=x0.city)"))
    assert b.sessions["x1"].provided == {"city": Text("Paris")}
    with pytest.raises(TypeMismatch):
        b.apply_command(parse_command("x2 = find_hotel_bookings(nights=x0.nights)"))


def test_say_yields_no_signal():
    assert BackendSession(CATALOG).apply_command(Say()) is None


def test_goal_state_examples():
    b = BackendSession(CATALOG)
    assert b.goal_state() == {}
    b.apply_command(parse_command('x0 = book_hotel_room(city="Paris", nights=2)'))
    state = b.goal_state()
    assert len(state) == 1 and len(state["x0"].slots) == 2
    b.apply_command(parse_command('x0.city = "Rome"'))
    assert b.goal_state()["x0"].slots["city"] == Text("Rome")


def test_cancel_and_finalize():
    b = BackendSession(CATALOG)
    b.apply_command(parse_command('x0 = book_hotel_room(city="Paris")'))
    b.apply_command(parse_command('x1 = set_alarm(time="7am")'))
    b.finalize(cancel_intents=["book_hotel_room", "set_alarm"])
    assert b.sessions["x0"].state == CANCELLED
    assert b.sessions["x1"].state == PERFORMED
    assert b.goal_state()["x0"].cancelled
    with pytest.raises(InvalidTransition):
        b.cancel("x1")
    with pytest.raises(InvalidTransition):
        b.apply_command(parse_command('x0.city = "Rome"'))


def random_command(rng: random.Random, catalog=CATALOG):
    """One command over the catalog; may be invalid on purpose."""
    var = f"x{rng.randrange(4)}"
    intents = [i for i in catalog if i.kind == "transactional"]
    kind = rng.randrange(4)
    if kind == 0:
        schema = rng.choice(intents)
        args = [(s.name, Integer(3) if s.value_type == "integer" else Text("v")) for s in schema.slots if rng.random() < 0.4]
        return IntentCall(var, schema.intent_name, tuple(args))
    if kind == 1:
        slot = rng.choice(["city", "check_in_date", "nights", "time"])
        return AttrAssign(var, slot, Integer(1) if slot == "nights" else Text("w"))
    if kind == 2:
        return Confirm(var)
    return Say()


def check_never_performed_missing(seq, catalog=CATALOG) -> None:
    b = BackendSession(catalog)
    for cmd in seq:
        try:
            signal = b.apply_command(cmd)
        except TodgenError:
            continue
        if isinstance(signal, MissingSlots):
            assert b.sessions[signal.var].state == COLLECTING
        for s in b.sessions.values():
            schema = catalog[s.schema_ref]
            if s.state == PERFORMED and schema.kind == "transactional":
                assert all(m in s.provided for m in schema.mandatory_slots)
            if s.state == AWAITING_CONFIRMATION:
                assert schema.requires_confirmation and all(m in s.provided for m in schema.mandatory_slots)


@settings(max_examples=150)
@given(st.integers(0, 2**32), st.integers(1, 25))
def test_never_performed_with_missing_mandatory(seed, length):
    rng = random.Random(seed)
    check_never_performed_missing([random_command(rng) for _ in range(length)])


@settings(max_examples=80)
@given(st.integers(0, 2**32), st.integers(1, 15))
def test_apply_is_deterministic(seed, length):
    rng = random.Random(seed)
    seq = [random_command(rng) for _ in range(length)]

    def run():
        b = BackendSession(CATALOG)
        out = []
        for cmd in seq:
            try:
                out.append(b.apply_command(cmd))
            except TodgenError as exc:
                out.append(type(exc).__name__)
        return out

    assert run() == run()


def test_store_rejects_duplicate_ids():
    with pytest.raises(ValueError):
        EntityStore({"a": [Entity("a-1"), Entity("a-1")]})
    store = EntityStore({"a": [Entity("a-2")]})
    assert store.next_id("a") == "a-3"
