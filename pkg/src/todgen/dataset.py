"""Conversation records, the JSONL dataset container, splits, and statistics."""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .dsl import (
    IntentCall,
    Say,
    parse_command,
    parse_signal,
    serialize_command,
    serialize_signal,
)
from .errors import CommandSyntaxError, SchemaError
from .planner import PHENOMENA
from .schema import SchemaCatalog

TURN_KINDS = ("user", "system", "signal", "response")
SPLITS = ("train", "dev", "test", "test_ood")


@dataclass(frozen=True)
class TurnRecord:
    kind: str
    text: str | None = None
    commands: tuple = ()
    signal: object = None
    phenomenon: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "commands", tuple(self.commands))
        if self.kind not in TURN_KINDS:
            raise ValueError(f"unknown turn kind {self.kind!r}")
        if self.kind in ("user", "response") and self.text is None:
            raise ValueError(f"{self.kind} turn needs text")
        if self.kind == "system" and not self.commands:
            raise ValueError("system turn needs commands")
        if self.kind == "signal" and self.signal is None:
            raise ValueError("signal turn needs a signal")
        if self.phenomenon is not None and (self.kind != "user" or self.phenomenon not in PHENOMENA):
            raise ValueError(f"phenomenon {self.phenomenon!r} not allowed on a {self.kind} turn")


@dataclass
class ConversationRecord:
    id: str
    turns: list
    phenomena: list = field(default_factory=list)
    split: str = "train"
    seed: int = 0
    plan: dict | None = None
    salvaged: bool = False

    def __post_init__(self):
        self.turns = list(self.turns)
        self.phenomena = list(self.phenomena)

    def user_phenomena(self) -> list[str]:
        return [t.phenomenon for t in self.turns if t.kind == "user" and t.phenomenon]

    def intents_used(self) -> list[str]:
        out = []
        for t in self.turns:
            if t.kind == "system":
                for c in t.commands:
                    if isinstance(c, IntentCall) and c.intent not in out:
                        out.append(c.intent)
        return out


def is_say_step(commands) -> bool:
    return all(isinstance(c, Say) for c in commands)


def check_turn_grammar(turns) -> list[str]:
    """Violations of the turn ordering; an empty list means the order is valid.

    user -> system -> (signal+ -> system)* -> response, repeated.  A system step
    made only of ``say`` commands is followed by a response; any other system
    step is followed by one signal per non-say command and then another system
    step.
    """
    problems = []
    turns = list(turns)
    if not turns:
        return ["empty conversation"]
    if turns[0].kind != "user":
        problems.append("turn 0: conversation must start with a user turn")
    i = 0
    while i < len(turns):
        t = turns[i]
        nxt = turns[i + 1] if i + 1 < len(turns) else None
        if t.kind == "user":
            if nxt is None or nxt.kind != "system":
                problems.append(f"turn {i}: user turn must be followed by a system turn")
            i += 1
        elif t.kind == "system":
            if is_say_step(t.commands):
                if nxt is None or nxt.kind != "response":
                    problems.append(f"turn {i}: say-only system turn must be followed by a response")
                i += 1
            else:
                n = sum(1 for c in t.commands if not isinstance(c, Say))
                sigs = turns[i + 1 : i + 1 + n]
                if len(sigs) != n or any(s.kind != "signal" for s in sigs):
                    problems.append(f"turn {i}: expected {n} signal turns")
                    i += 1
                    continue
                j = i + 1 + n
                if j >= len(turns) or turns[j].kind != "system":
                    problems.append(f"turn {j - 1}: signals must be followed by a system turn")
                i = j
        elif t.kind == "response":
            if nxt is not None and nxt.kind != "user":
                problems.append(f"turn {i}: response must be followed by a user turn or end")
            i += 1
        else:
            problems.append(f"turn {i}: unexpected {t.kind} turn")
            i += 1
    if turns[-1].kind != "response":
        problems.append(f"turn {len(turns) - 1}: conversation must end with a response")
    return problems


# ------------------------------------------------------------- container


def turn_to_dict(t: TurnRecord) -> dict:
    return {
        "kind": t.kind,
        "text": t.text,
        "commands": [serialize_command(c) for c in t.commands],
        "signal": serialize_signal(t.signal) if t.signal is not None else None,
        "phenomenon": t.phenomenon,
    }


def turn_from_dict(d: dict) -> TurnRecord:
    return TurnRecord(
        kind=d["kind"],
        text=d.get("text"),
        commands=tuple(parse_command(c) for c in d.get("commands") or ()),
        signal=parse_signal(d["signal"]) if d.get("signal") else None,
        phenomenon=d.get("phenomenon"),
    )


def record_to_dict(r: ConversationRecord) -> dict:
    out = {
        "id": r.id,
        "split": r.split,
        "turns": [turn_to_dict(t) for t in r.turns],
        "phenomena": list(r.phenomena),
        "seed": r.seed,
    }
    if r.plan is not None:
        out["plan"] = r.plan
    if r.salvaged:
        out["salvaged"] = True
    return out


def record_from_dict(d: dict) -> ConversationRecord:
    split = d.get("split", "train")
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    return ConversationRecord(
        id=str(d["id"]),
        turns=[turn_from_dict(t) for t in d["turns"]],
        phenomena=list(d.get("phenomena", [])),
        split=split,
        seed=int(d.get("seed", 0)),
        plan=d.get("plan"),
        salvaged=bool(d.get("salvaged", False)),
    )


def dumps_record(r: ConversationRecord) -> str:
    return json.dumps(record_to_dict(r), ensure_ascii=False, separators=(",", ":"))


def write_dataset(records, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(dumps_record(r) + "\n")


def read_dataset(path) -> list[ConversationRecord]:
    records = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(record_from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, CommandSyntaxError) as exc:
                raise SchemaError(f"malformed record: {exc}", line=lineno) from None
    return records


# ---------------------------------------------------------------- splits


def assign_splits(records, catalog: SchemaCatalog, ood_intents=(), ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """Put records touching a held-out intent in test_ood; shuffle the rest by ratios."""
    ood = set(ood_intents)
    unknown = ood - {i.intent_name for i in catalog}
    if unknown:
        raise ValueError(f"held-out intents not in catalog: {sorted(unknown)}")
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must be three non-negative numbers summing to 1")
    records = list(records)
    in_domain = [i for i, r in enumerate(records) if not ood.intersection(r.intents_used())]
    rng = random.Random(seed)
    rng.shuffle(in_domain)
    n = len(in_domain)
    n_train = round(n * ratios[0])
    n_dev = min(round(n * ratios[1]), n - n_train)
    labels = {}
    for k, idx in enumerate(in_domain):
        labels[idx] = "train" if k < n_train else "dev" if k < n_train + n_dev else "test"
    out = []
    for i, r in enumerate(records):
        r.split = labels.get(i, "test_ood")
        out.append(r)
    return out


# ----------------------------------------------------------------- stats


@dataclass
class DatasetStats:
    domains: int = 0
    intents: int = 0
    slots: int = 0
    dialogues: int = 0
    turns: int = 0
    turns_per_dialogue: float = 0.0
    split_counts: dict = field(default_factory=dict)
    phenomenon_counts: dict = field(default_factory=dict)
    unhappy_dialogues: int = 0
    unhappy_percent: float = 0.0

    def as_dict(self) -> dict:
        return {
            "domains": self.domains,
            "intents": self.intents,
            "slots": self.slots,
            "dialogues": self.dialogues,
            "turns": self.turns,
            "turns_per_dialogue": self.turns_per_dialogue,
            "split_counts": dict(self.split_counts),
            "phenomenon_counts": dict(self.phenomenon_counts),
            "unhappy_dialogues": self.unhappy_dialogues,
            "unhappy_percent": self.unhappy_percent,
        }

    def table(self) -> str:
        lines = [
            f"dialogues            {self.dialogues}",
            f"turns                {self.turns}",
            f"turns per dialogue   {self.turns_per_dialogue:.2f}",
            f"domains              {self.domains}",
            f"intents              {self.intents}",
            f"slots                {self.slots}",
        ]
        lines += [f"split {s:<15}{self.split_counts.get(s, 0)}" for s in SPLITS]
        lines += [f"{k:<27}{self.phenomenon_counts.get(k, 0)}" for k in PHENOMENA]
        lines.append(f"{'1+ phenomena':<27}{self.unhappy_dialogues} ({self.unhappy_percent:.1f}%)")
        return "\n".join(lines)


def compute_stats(records, catalog: SchemaCatalog | None = None) -> DatasetStats:
    """Counts over records; every turn kind counts as a turn.

    Domain, intent and slot counts cover the intents used by the records; the
    catalog, when given, resolves domains and slot lists.
    """
    records = list(records)
    stats = DatasetStats()
    stats.dialogues = len(records)
    stats.turns = sum(len(r.turns) for r in records)
    stats.turns_per_dialogue = stats.turns / stats.dialogues if records else 0.0
    splits = Counter(r.split for r in records)
    stats.split_counts = {s: splits.get(s, 0) for s in SPLITS}
    per_kind = Counter()
    for r in records:
        per_kind.update(set(r.phenomena))
    stats.phenomenon_counts = {k: per_kind.get(k, 0) for k in PHENOMENA}
    stats.unhappy_dialogues = sum(1 for r in records if r.phenomena)
    stats.unhappy_percent = 100.0 * stats.unhappy_dialogues / len(records) if records else 0.0
    intents = []
    for r in records:
        for name in r.intents_used():
            if name not in intents:
                intents.append(name)
    stats.intents = len(intents)
    if catalog is not None:
        known = [catalog[n] for n in intents if n in catalog]
        stats.domains = len({s.domain for s in known})
        stats.slots = len({(s.intent_name, slot.name) for s in known for slot in s.slots})
    return stats
