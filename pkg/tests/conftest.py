from __future__ import annotations

from pathlib import Path

import pytest

from todgen.providers import ScriptedProvider
from todgen.schema import IntentSchema, SlotSpec, build_catalog, load_catalog
from todgen.simulator import Simulator

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def seed_catalog():
    return load_catalog(FIXTURES / "catalog.jsonl")


@pytest.fixture(scope="session")
def simulator():
    return Simulator()


@pytest.fixture
def sim_provider(simulator):
    return ScriptedProvider(fallback=simulator)


def make_small_catalog():
    alarm = IntentSchema(
        "set_alarm",
        "alarms",
        "transactional",
        (SlotSpec("time", "time_text", True), SlotSpec("label", "text", False), SlotSpec("repeat", "boolean", False)),
        "alarms",
        requires_confirmation=False,
    )
    hotel = IntentSchema(
        "book_hotel",
        "travel",
        "transactional",
        (
            SlotSpec("city", "text", True),
            SlotSpec("nights", "integer", True),
            SlotSpec("budget", "number", False),
            SlotSpec("room_type", "enum_text", False, ("single", "double")),
        ),
        "hotel_bookings",
        requires_confirmation=True,
    )
    taxi = IntentSchema(
        "book_taxi",
        "travel",
        "transactional",
        (SlotSpec("pickup", "text", True), SlotSpec("destination", "text", True)),
        "taxi_rides",
        requires_confirmation=True,
    )
    return build_catalog([alarm, hotel, taxi])


@pytest.fixture(scope="session")
def small_catalog():
    return make_small_catalog()


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
