"""Deterministic rule-based stand-in for the language model.

Every stage prompt is answered from its JSON context alone, so the whole
pipeline runs offline and reproducibly.  User utterances follow a small set of
sentence templates and the labelling side parses those templates back, which
makes the simulated agents agree with each other by construction.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from importlib import resources

from .dsl import (
    AttrAssign,
    Boolean,
    Confirm,
    ConfirmationRequired,
    Integer,
    IntentCall,
    MissingSlots,
    Number,
    Performed,
    Placeholder,
    QueryResult,
    Say,
    Text,
    parse_signal,
    parse_value,
    serialize_command,
    serialize_value,
)
from .prompts import split_prompt
from .providers import ScriptedProvider

STRING_TYPES = ("text", "date_text", "time_text")

OPEN = "I'd like to {intent}."
SLOT = "The {slot} is {value}."
IN_TURN = "The {slot} is {wrong}, sorry, I mean {value}."
ASR = "The {slot} is {value}"
CONFIRM = "Yes, please go ahead."
CORRECTION = "Actually, change the {slot} to {value}."
_IN_TURN_SEP = ", sorry, I mean "

CANNED = {
    "overheard_answer": (
        "Honey, can you grab my keys from the kitchen table?",
        "No, not that one, the blue jacket on the chair.",
        "Hang on, I'm just talking to my flatmate here.",
    ),
    "irrelevant_answer": (
        "By the way, do you think it will rain later?",
        "I had a really nice pasta for lunch today.",
        "My cat keeps sitting on the keyboard.",
    ),
    "sarcasm": (
        "Oh great, another question, my favourite thing in the world.",
        "Wow, you really make this so easy for me.",
        "Sure, because I have all day to answer these.",
    ),
    "delay_confirmation": (
        "Hold on, let me double check something first.",
        "Give me a second before I decide.",
        "Wait, I need to think about it for a moment.",
    ),
    "cancellation": (
        "Actually, never mind, please cancel that.",
        "Forget it, I don't want to do that any more.",
        "Please stop, I've changed my mind about that.",
    ),
}
JUSTIFICATIONS = (
    "Now that the first request is handled, there is something else on my list.",
    "While I have you, there is one more thing I need sorted.",
    "That reminds me, I also have another request.",
)
RESPONSES_AFTER_SAY = (
    "Okay, no problem.",
    "Sure, just let me know.",
    "Alright, I'm here when you need me.",
)
CLOSING = "I'm sorry, I have to stop here for now. Please try again a little later."

# Candidate values by slot-name keyword; the first matching row wins.
_VOCAB = (
    (("email",), ("sam.jones@example.com", "priya.k@example.org", "alex.ward@example.net")),
    (("url",), ("www.example.com/news", "www.example.org/recipes", "www.example.net/weather")),
    (("city", "destination", "origin", "port"), ("Paris", "New York", "Lisbon", "San Francisco", "Tokyo")),
    (("address", "location", "pickup"), ("12 High Street", "the central station", "45 Park Avenue", "the city library")),
    (("restaurant",), ("Luigi's Trattoria", "The Golden Dragon", "Casa Verde", "Blue Lotus")),
    (("salon", "spa", "pool", "cinema", "supermarket", "coffee_shop", "shop"), ("Riverside", "Greenway Centre", "Harbour View", "Oak Lane")),
    (("song", "track"), ("Bohemian Rhapsody", "Yellow Submarine", "Dancing Queen", "Hotel California")),
    (("artist", "author"), ("Taylor Swift", "Ed Sheeran", "Adele", "Haruki Murakami")),
    (("film", "program", "podcast", "episode_title", "book_title", "page_title"), ("Into the Wild", "Night Train", "Blue Planet", "Summer Stories")),
    (("playlist", "folder", "label", "regime", "channel"), ("morning run", "road trip", "weekend chill", "work focus")),
    (("name", "recipient", "payee", "sender", "contact", "participant", "stylist", "client", "cardholder", "user", "cc"), ("Sarah Miller", "John Smith", "Priya Patel", "Tom Baker")),
    (("cuisine",), ("Italian", "Thai", "Mexican", "Japanese")),
    (("genre",), ("jazz", "classic rock", "hip hop", "indie pop")),
    (("language",), ("Spanish", "French", "German")),
    (("colour", "color"), ("red", "navy blue", "forest green")),
    (("coffee",), ("flat white", "double espresso", "iced latte")),
    (("milk",), ("oat milk", "soy milk", "whole milk")),
    (("dishes", "items"), ("two margherita pizzas", "milk and bread and eggs", "a green curry with rice")),
    (("treatment", "massage", "nail", "service"), ("deep tissue massage", "gel manicure", "hot stone therapy")),
    (("exercise", "goal"), ("morning running", "lose five kilos", "strength training")),
    (("device", "streaming", "account", "reference"), ("living room speaker", "main savings account", "invoice number twelve")),
    (
        ("note", "message", "body", "text", "review", "description", "reason", "requests", "subject", "notes", "title"),
        ("buy milk on the way home", "meeting moved to the afternoon", "an absolute classic with great performances", "please call me back soon"),
    ),
)
_DEFAULT_TEXT = ("something simple", "the usual one", "my favourite option")
_DATES = ("next Monday", "the 5th of March", "tomorrow", "this Friday", "the 21st of June")
_TIMES = ("7am", "half past six", "noon", "8:30 pm", "quarter to nine")
_INTS = (
    (("rating", "stars"), (3, 4, 5)),
    (("minutes", "duration", "length"), (15, 30, 45, 60)),
    (("volume", "level"), (3, 5, 8)),
    (("chapter", "episode"), (2, 5, 12)),
    (("calories",), (250, 400, 600)),
)
_NUMBERS = (12.5, 49.99, 120.0, 300.0)


def words(name: str) -> str:
    return name.replace("_", " ")


def _rng(*parts) -> random.Random:
    digest = hashlib.sha256(json.dumps(parts, sort_keys=True, default=str).encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def say_value(value) -> str:
    """How a user speaks a slot value."""
    if isinstance(value, Text):
        return value.value
    if isinstance(value, Boolean):
        return "yes" if value.value else "no"
    if isinstance(value, (Integer, Number)):
        return serialize_value(value)
    raise TypeError(f"cannot speak {value!r}")


def read_value(slot: dict, raw: str):
    """Labelling side: a spoken value as a command value."""
    raw = raw.strip()
    t = slot["type"]
    if t in STRING_TYPES:
        return Placeholder()
    if t == "enum_text":
        return Text(raw)
    if t == "boolean":
        return Boolean(raw.lower() in ("yes", "true"))
    if t == "integer":
        return Integer(int(raw))
    return Number(float(raw))


def candidate_values(slot: dict, k: int = 4) -> list:
    name, t = slot["name"], slot["type"]
    tokens = set(name.split("_")) | {name}
    if t == "enum_text":
        return [Text(v) for v in slot["allowed"]]
    if t == "boolean":
        return [Boolean(True), Boolean(False)]
    if t == "integer":
        for keys, values in _INTS:
            if any(key in name for key in keys):
                return [Integer(v) for v in values]
        return [Integer(v) for v in (1, 2, 3, 4)]
    if t == "number":
        return [Number(v) for v in _NUMBERS]
    if t == "date_text":
        return [Text(v) for v in _DATES[:k]]
    if t == "time_text":
        return [Text(v) for v in _TIMES[:k]]
    for keys, values in _VOCAB:
        if any(key in tokens or (len(key) > 4 and key in name) for key in keys):
            return [Text(v) for v in values[:k]]
    return [Text(v) for v in _DEFAULT_TEXT]


# ----------------------------------------------------- template read-back


def slot_mentions(text: str, slots) -> list[tuple[str, str]]:
    """(slot, spoken value) pairs from ``The <slot> is <value>.`` phrases, in order."""
    marks = []
    for slot in slots:
        for m in re.finditer(re.escape(f"The {words(slot)} is "), text):
            marks.append((m.start(), m.end(), slot))
    marks.sort()
    out = []
    for k, (start, end, slot) in enumerate(marks):
        stop = marks[k + 1][0] if k + 1 < len(marks) else len(text)
        value = text[end:stop].split(". The ", 1)[0].strip()
        if value.endswith("."):
            value = value[:-1]
        if _IN_TURN_SEP in value:
            value = value.split(_IN_TURN_SEP, 1)[1]
        out.append((slot, value))
    return out


def correction_mention(text: str, slots):
    m = re.fullmatch(r"Actually, change the (.+?) to (.+)\.", text)
    if not m:
        return None
    by_words = {words(s): s for s in slots}
    slot = by_words.get(m.group(1))
    return (slot, m.group(2)) if slot else None


# --------------------------------------------------------------- stages


class Simulator:
    """Callable fallback for ScriptedProvider: prompt in, reply out."""

    def __init__(self, seed_replies: dict | None = None):
        self.seed_replies = seed_replies if seed_replies is not None else load_seed_replies()

    def __call__(self, prompt: str) -> str:
        stage, ctx = split_prompt(prompt)
        handler = getattr(self, f"_{stage}", None)
        if handler is None:
            raise ValueError(f"no simulated reply for {stage}")
        return handler(ctx)

    # stage 1: intent schema from description
    def _stage_01(self, ctx):
        return self.seed_replies[ctx["description"]]

    # stage 2: candidate slot values
    def _stage_02(self, ctx):
        lines = []
        for slot in ctx["slots"]:
            values = candidate_values(slot)
            lines.append(f"{slot['name']} = [" + ", ".join(serialize_value(v) for v in values) + "]")
        return "\n".join(lines)

    # stage 3: follow-up intents
    def _stage_03(self, ctx):
        rng = _rng(ctx)
        same = [c["intent"] for c in ctx["candidates"] if c["domain"] == ctx["domain"]]
        other = [c["intent"] for c in ctx["candidates"] if c["domain"] != ctx["domain"]]
        rng.shuffle(same)
        rng.shuffle(other)
        return ", ".join([ctx["primary"]] + (same + other)[: ctx["length"] - 1])

    # stage 4: value refinement (accept as is)
    def _stage_04(self, ctx):
        return "\n".join(f"{k} = {v}" for k, v in ctx["values"].items())

    def _stage_05(self, ctx):
        return JUSTIFICATIONS[_rng(ctx).randrange(len(JUSTIFICATIONS))]

    def _stage_06(self, ctx):
        rng = _rng(ctx)
        specs = {s["name"]: s for s in ctx["intent"]["slots"]}
        lines = []
        for slot in ctx["slots"]:
            options = ctx["candidates"].get(slot) or [serialize_value(v) for v in candidate_values(specs[slot])]
            lines.append(f"{slot} = {rng.choice(options)}")
        return "\n".join(lines)

    def _stage_07(self, ctx):
        return "NO CHANGE"

    # stage 8: entities for query intents
    def _stage_08(self, ctx):
        lines = []
        for et in ctx["entity_types"]:
            names = list(dict.fromkeys(et["required"] + list(et["filters"])))
            for k in range(2):
                fields = []
                for name in names:
                    if k == 0 and name in et["filters"]:
                        fields.append(f"{name}={et['filters'][name]}")
                        continue
                    options = et["candidates"].get(name) or [
                        serialize_value(v) for v in candidate_values({"name": name, "type": et["fields"][name], "allowed": None})
                    ]
                    fields.append(f"{name}={options[(k + 1) % len(options)]}")
                lines.append(f"{et['entity_name']}: entity(" + ", ".join(['id="-"'] + fields) + ")")
        return "\n".join(lines)

    # stage 9: user
    def _stage_09(self, ctx):
        a = ctx["active"]
        values = {k: parse_value(v) for k, v in a["values"].items()}
        ph = a.get("phenomenon")
        rng = _rng(ctx["conversation"], a)
        if ph:
            kind = ph["kind"]
            if kind == "in_turn_correction":
                text = self._opening(a, values, override=(ph["slot"], parse_value(ph["retracted"]), parse_value(ph["value"])))
            elif kind == "correction":
                text = CORRECTION.format(slot=words(ph["slot"]), value=say_value(parse_value(ph["value"])))
            elif kind == "asr_early_end":
                full = parse_value(ph["value"]).value.split()
                text = ASR.format(slot=words(ph["slot"]), value=" ".join(full[: max(1, len(full) // 2)]))
            elif kind == "answer_about_another_slot":
                text = SLOT.format(slot=words(ph["other_slot"]), value=say_value(parse_value(ph["other_value"])))
            else:
                options = CANNED[kind]
                text = options[rng.randrange(len(options))]
            return f"{text} {ph['token']}"
        if a["step"] == "open":
            return self._opening(a, values)
        if a["step"] == "confirm":
            return CONFIRM
        slots = a["requested"] or list(values)
        return " ".join(SLOT.format(slot=words(s), value=say_value(values[s])) for s in slots if s in values)

    def _opening(self, a, values, override=None):
        parts = [a["justification"]] if a.get("justification") else []
        parts.append(OPEN.format(intent=words(a["intent"])))
        for s in a["opening"]:
            if override and s == override[0]:
                parts.append(IN_TURN.format(slot=words(s), wrong=say_value(override[1]), value=say_value(override[2])))
            else:
                parts.append(SLOT.format(slot=words(s), value=say_value(values[s])))
        return " ".join(parts)

    # stages 10 and 14: labelling
    def _stage_10(self, ctx):
        return "\n".join(serialize_command(c) for c in label_from_transcript(ctx["conversation"], ctx["tools"]))

    _stage_14 = _stage_10

    # stage 11: spans
    def _stage_11(self, ctx):
        text = ctx["user_text"]
        slots = list(dict.fromkeys(ctx["placeholders"]))
        found = dict(slot_mentions(text, slots))
        corr = correction_mention(text, slots)
        if corr:
            found[corr[0]] = corr[1]
        return "\n".join(f"{s} = {json.dumps(found.get(s, ''), ensure_ascii=False)}" for s in ctx["placeholders"])

    # stage 12: response
    def _stage_12(self, ctx):
        if ctx["signal"] is None:
            return RESPONSES_AFTER_SAY[_rng(ctx["conversation"]).randrange(len(RESPONSES_AFTER_SAY))]
        sig = parse_signal(ctx["signal"])
        if isinstance(sig, MissingSlots):
            names = [words(s) for s in sig.slots]
            joined = names[0] if len(names) == 1 else ", ".join(names[:-1]) + " and " + names[-1]
            return f"Could you tell me the {joined}?"
        if isinstance(sig, ConfirmationRequired):
            return "I have everything I need. Shall I go ahead?"
        if isinstance(sig, Performed):
            return "All done, that has been taken care of."
        if isinstance(sig, QueryResult):
            n = len(sig.entities)
            return "I could not find anything matching that." if n == 0 else f"I found {n} matching result{'s' if n != 1 else ''}."
        return "Okay."

    def _salvage(self, ctx):
        return CLOSING


def label_from_transcript(lines, tools) -> list:
    """Commands for the last transcript line, read back from the user templates."""
    last = lines[-1]
    if not last.startswith("User: "):
        return [_say()]
    text = last[len("User: "):]
    by_name = {t["intent"]: t for t in tools}
    bound: dict[str, str] = {}
    latest: dict = {}
    order: list[str] = []
    for line in lines[:-1]:
        if line.startswith("System: "):
            m = re.match(r"System: (x[0-9]+) = ([A-Za-z_][A-Za-z0-9_]*)\(", line)
            if m:
                bound[m.group(1)] = m.group(2)
        elif line.startswith("Signal: "):
            sig = parse_signal(line[len("Signal: "):])
            if hasattr(sig, "var"):
                latest[sig.var] = sig
                order.append(sig.var)
    pending = None
    for var in reversed(order):
        if isinstance(latest[var], (MissingSlots, ConfirmationRequired)):
            pending = var
            break

    def slots_of(intent):
        return {s["name"]: s for s in by_name[intent]["slots"]} if intent in by_name else {}

    m = re.search(r"I'd like to (.+?)\.", text)
    if m:
        phrase = m.group(1)
        intent = next((name for name in by_name if words(name) == phrase), None)
        if intent:
            specs = slots_of(intent)
            args = [(s, read_value(specs[s], v)) for s, v in slot_mentions(text[m.end():], specs)]
            return [IntentCall(f"x{len(bound)}", intent, tuple(args))]
    if text == CONFIRM and pending and isinstance(latest[pending], ConfirmationRequired):
        return [Confirm(pending)]
    live = [v for v in reversed(list(bound)) if not isinstance(latest.get(v), (Performed, QueryResult))]
    for var in live:
        specs = slots_of(bound[var])
        corr = correction_mention(text, specs)
        if corr:
            return [AttrAssign(var, corr[0], read_value(specs[corr[0]], corr[1]))]
    if pending:
        specs = slots_of(bound[pending])
        mentions = slot_mentions(text, specs)
        if mentions:
            return [AttrAssign(pending, s, read_value(specs[s], v)) for s, v in mentions]
    return [_say()]


def _say():
    return Say(())


def load_seed_replies() -> dict:
    """Bundled description -> stage-1 reply pairs."""
    text = resources.files("todgen").joinpath("data/seed_intents.txt").read_text(encoding="utf-8")
    out = {}
    for block in re.split(r"\n\s*\n", text):
        lines = [ln for ln in block.strip().splitlines() if ln.strip() and not ln.startswith("#")]
        if not lines or not lines[0].startswith("DESCRIPTION:"):
            continue
        out[lines[0][len("DESCRIPTION:"):].strip()] = "\n".join(lines[1:])
    return out


def simulated_provider(replies=None, by_hash=None) -> ScriptedProvider:
    """A scripted provider whose unscripted prompts are answered by the simulator."""
    return ScriptedProvider(replies=replies, by_hash=by_hash, fallback=Simulator())
