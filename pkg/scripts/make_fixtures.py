"""Regenerate the committed test fixtures under tests/fixtures.

Run from the repository root: ``python3 scripts/make_fixtures.py``.  The
outputs are deterministic; expected values in the tests were counted from the
written files, so regenerating means re-counting them too.
"""

from __future__ import annotations

import json
import random
import shutil
import tempfile
from dataclasses import replace
from pathlib import Path

from todgen.config import RunConfig
from todgen.dataset import ConversationRecord, TurnRecord, read_dataset, write_dataset
from todgen.dsl import AttrAssign, IntentCall, Say, Text, parse_command, parse_signal
from todgen.evaluation import system_points, write_predictions
from todgen.pipeline import run_pipeline
from todgen.planner import PHENOMENA, SamplingConfig

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"
OOD = ("book_flight", "order_takeaway")


def seed_dataset() -> None:
    """50 conversations with a raised phenomenon rate and every kind weighted equally."""
    with tempfile.TemporaryDirectory() as tmp:
        config = RunConfig(
            seed=2024,
            n=50,
            out=tmp,
            jobs=1,
            sampling=SamplingConfig(phenomenon_rate=0.6, phenomenon_weights={k: 1.0 for k in PHENOMENA}),
            ood_intents=OOD,
        )
        manifest = run_pipeline(config)
        assert manifest["discarded"] == 0, manifest
        shutil.copy(Path(tmp) / "dataset.jsonl", FIXTURES / "seed_dataset.jsonl")
        shutil.copy(Path(tmp) / "catalog.jsonl", FIXTURES / "catalog.jsonl")


def _perturb(cmds, rng: random.Random):
    """One of several prediction mistakes, or the gold commands unchanged."""
    cmds = list(cmds)
    choice = rng.randrange(7)
    for k, c in enumerate(cmds):
        if isinstance(c, IntentCall) and c.args and choice == 0:
            cmds[k] = replace(c, args=c.args[:-1])  # dropped slot
            return cmds, "drop_slot"
        if isinstance(c, IntentCall) and choice == 1:
            cmds[k] = replace(c, intent=c.intent + "_v2")  # wrong intent
            return cmds, "wrong_intent"
        if isinstance(c, (IntentCall, AttrAssign)) and choice == 2:
            for slot, value in (c.args if isinstance(c, IntentCall) else [(c.slot, c.value)]):
                if isinstance(value, Text) and len(value.value) > 8:
                    near = Text(value.value[:-1])  # within the fuzzy threshold
                    if isinstance(c, IntentCall):
                        cmds[k] = replace(c, args=tuple((s, near if s == slot else v) for s, v in c.args))
                    else:
                        cmds[k] = replace(c, value=near)
                    return cmds, "near_text"
        if isinstance(c, (IntentCall, AttrAssign)) and choice == 3:
            for slot, value in (c.args if isinstance(c, IntentCall) else [(c.slot, c.value)]):
                if isinstance(value, Text):
                    far = Text("something else entirely")
                    if isinstance(c, IntentCall):
                        cmds[k] = replace(c, args=tuple((s, far if s == slot else v) for s, v in c.args))
                    else:
                        cmds[k] = replace(c, value=far)
                    return cmds, "far_text"
        if not isinstance(c, Say) and choice == 4:
            return [Say(())], "say_only"
    if choice == 5 and all(isinstance(c, Say) for c in cmds):
        return [parse_command('x9 = play_song(song_title="Extra")')], "spurious_call"
    return cmds, "gold"


def eval_fixture() -> None:
    gold = read_dataset(FIXTURES / "seed_dataset.jsonl")[:20]
    write_dataset(gold, FIXTURES / "eval_gold.jsonl")
    rng = random.Random(7)
    predictions = {}
    for r in gold:
        for k, (_, _, cmds) in enumerate(system_points(r)):
            predictions[(r.id, k)], _ = _perturb(cmds, rng) if rng.random() < 0.35 else (cmds, "gold")
    write_predictions(predictions, FIXTURES / "eval_pred.jsonl")


def _record(cid: str, turns, plan=("set_alarm",), phenomena=()) -> ConversationRecord:
    built = []
    for kind, payload, *rest in turns:
        if kind == "system":
            built.append(TurnRecord("system", commands=tuple(parse_command(c) for c in payload)))
        elif kind == "signal":
            built.append(TurnRecord("signal", signal=parse_signal(payload)))
        else:
            built.append(TurnRecord(kind, text=payload, phenomenon=rest[0] if rest else None))
    values = {"set_alarm": {"time": '"7am"'}, "play_song": {"song_title": '"Yesterday"'}}
    full_plan = {"seed": 0, "intent_sequence": list(plan), "slot_assignments": [values[name] for name in plan]}
    return ConversationRecord(cid, built, list(phenomena), "train", 0, full_plan)


def defect_fixtures() -> None:
    """A clean record and four records with one post-filter defect each."""
    opening = [
        ("user", "I'd like to set alarm. The time is 7am."),
        ("system", ['x0 = set_alarm(time="7am")']),
        ("signal", "signal: performed(x0, id=\"alarms-1\")"),
    ]
    closing = [("system", ["say()"]), ("response", "All done, that has been taken care of.")]
    records = [
        _record("clean", opening + closing),
        _record(
            "overwrite_without_correction",
            opening + closing + [
                ("user", "The time is 8am."),
                ("system", ['x0.time = "8am"']),
                ("signal", "signal: performed(x0, id=\"alarms-1\")"),
            ] + closing,
        ),
        _record(
            "empty_string_slot",
            [("user", "I'd like to set alarm. The time is 7am."), ("system", ['x0 = set_alarm(time="")']), opening[2]] + closing,
        ),
        _record("hint_predicted", opening + [("system", ['say(hint="ask for the label")']), closing[1]]),
        _record("unperformed_intent", opening + closing, plan=("set_alarm", "play_song")),
    ]
    write_dataset(records, FIXTURES / "defects.jsonl")


if __name__ == "__main__":
    FIXTURES.mkdir(parents=True, exist_ok=True)
    seed_dataset()
    eval_fixture()
    defect_fixtures()
    for p in sorted(FIXTURES.iterdir()):
        print(p.name, sum(1 for _ in p.open()), "lines")
    print(json.dumps({"ood": OOD}))
