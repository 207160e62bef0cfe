"""Validators run while generating and over finished records.

Policy: anything doubtful (disagreement, unparseable validator output) fails.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import prompts
from .agents import (
    conversation_progress,
    history_lines,
    known_vars,
    label_context,
    parse_labels,
    system_label,
)
from .backend import BackendSession
from .dataset import ConversationRecord, TurnRecord, check_turn_grammar
from .dsl import (
    AttrAssign,
    Confirm,
    IntentCall,
    Performed,
    QueryResult,
    Say,
    Text,
    commands_equal,
    command_values,
)
from .errors import InvalidTransition, ParseError, ProviderError, TypeMismatch, UnknownIntent, UnknownVariable
from .planner import Phenomenon, plan_from_dict
from .providers import DEFAULT_TEMPERATURE, LLMProvider
from .schema import SchemaCatalog

SALVAGE_MIN_TURNS = 10


@dataclass(frozen=True)
class Reason:
    check: str
    detail: str = ""
    turn_index: int | None = None


@dataclass(frozen=True)
class Verdict:
    passed: bool
    reasons: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "reasons", tuple(self.reasons))
        if self.passed and self.reasons:
            raise ValueError("a passing verdict carries no reasons")
        if not self.passed and not self.reasons:
            raise ValueError("a failing verdict needs a reason")

    @classmethod
    def ok(cls) -> "Verdict":
        return cls(True)

    @classmethod
    def fail(cls, check: str, detail: str = "", turn_index: int | None = None) -> "Verdict":
        return cls(False, (Reason(check, detail, turn_index),))

    @classmethod
    def merge(cls, verdicts) -> "Verdict":
        reasons = [r for v in verdicts for r in v.reasons]
        return cls(not reasons, tuple(reasons))

    @property
    def checks(self) -> list[str]:
        return [r.check for r in self.reasons]


# --------------------------------------------------------------- stage 13


def self_consistency_check(
    history, provider: LLMProvider, trials: int = 3, *, catalog: SchemaCatalog, original=None, tools=None, prompt_dir=None
) -> Verdict:
    """Repeat the labelling call; every trial must agree up to variable naming."""
    at = len(history)
    runs = [list(original)] if original is not None else []
    while len(runs) < trials:
        try:
            runs.append(system_label(history, provider, catalog, tools, prompt_dir))
        except ParseError as exc:
            return Verdict.fail("stage13_unparseable", str(exc), at)
    known = known_vars(history)
    for k, other in enumerate(runs[1:], 2):
        if not commands_equal(runs[0], other, known):
            return Verdict.fail("stage13_mismatch", f"trial {k} disagrees with trial 1", at)
    return Verdict.ok()


# --------------------------------------------------------------- stage 14


def rule_aware_validate(
    history, rules, provider: LLMProvider, original=None, *, catalog: SchemaCatalog, tools=None, prompt_dir=None
) -> Verdict:
    """Independent labelling that may read the user's rules; must match exactly."""
    if original is None:
        raise ValueError("the labelling output to validate is required")
    at = len(history)
    context = label_context(history, catalog, tools)
    context["rules"] = [r.instruction for r in rules]
    reply = provider.complete(prompts.render(14, context, prompt_dir), DEFAULT_TEMPERATURE)
    try:
        labels = parse_labels(reply, history, catalog, tools)
    except ParseError as exc:
        return Verdict.fail("stage14_unparseable", str(exc), at)
    if not commands_equal(original, labels, known_vars(history)):
        return Verdict.fail("stage14_mismatch", "rule-aware labels differ", at)
    return Verdict.ok()


def make_step_validator(rules, provider: LLMProvider, catalog: SchemaCatalog, trials: int = 3, rule_aware: bool = True, prompt_dir=None):
    """Both provider-backed checks, for use as run_conversation's step hook."""

    def check(history, commands) -> Verdict:
        verdict = self_consistency_check(history, provider, trials, catalog=catalog, original=commands, prompt_dir=prompt_dir)
        if verdict.passed and rule_aware:
            verdict = rule_aware_validate(history, rules, provider, commands, catalog=catalog, prompt_dir=prompt_dir)
        return verdict

    return check


# -------------------------------------------------------- phenomenon checks


def _norm(s: str) -> str:
    return " ".join(s.lower().split())


def _same(a, b) -> bool:
    if isinstance(a, Text) and isinstance(b, Text):
        return _norm(a.value) == _norm(b.value)
    return a == b


def _assignments(cmds):
    """(var, slot, value) triples set by a command list."""
    out = []
    for c in cmds:
        if isinstance(c, (IntentCall, AttrAssign)):
            out.extend((c.var, slot, value) for slot, value in command_values(c))
    return out


def phenomenon_signal_check(
    turn: TurnRecord,
    following_commands,
    *,
    phenomenon: Phenomenon | None = None,
    planned: dict | None = None,
    existing: dict | None = None,
    turn_index: int | None = None,
) -> Verdict:
    """Does the system step after a phenomenon turn have the expected shape?

    ``existing`` maps variables to the slot values held before the step and
    ``planned`` is the target intent's planned slot values.
    """
    kind = turn.phenomenon
    if kind is None:
        raise ValueError("turn carries no phenomenon")
    cmds = list(following_commands)
    existing = existing or {}
    planned = planned or {}
    target = phenomenon.target_slot if phenomenon else None
    check = f"phenomenon_{kind}"
    sets = _assignments(cmds)

    if kind in ("irrelevant_answer", "overheard_answer", "sarcasm"):
        if not all(isinstance(c, Say) for c in cmds):
            return Verdict.fail(check, "expected only say()", turn_index)
    elif kind in ("delay_confirmation", "cancellation"):
        if any(isinstance(c, Confirm) for c in cmds):
            return Verdict.fail(check, "confirmation issued", turn_index)
    elif kind == "correction":
        overwrites = [(v, s) for v, s, _ in sets if s in existing.get(v, {}) and (target is None or s == target)]
        if not overwrites:
            return Verdict.fail(check, "no overwriting assignment", turn_index)
    elif kind == "in_turn_correction":
        overwrites = [(v, s) for v, s, _ in sets if s in existing.get(v, {}) and (target is None or s == target)]
        resolved = [
            value
            for _, s, value in sets
            if s == target and target in planned and _same(value, planned[target])
            and not (phenomenon.retracted_value is not None and _same(value, phenomenon.retracted_value))
        ]
        if not overwrites and not resolved:
            return Verdict.fail(check, "corrected value not labelled", turn_index)
    elif kind == "asr_early_end":
        want = planned.get(target)
        cut = [value for _, s, value in sets if s == target]
        if not isinstance(want, Text) or len(cut) != 1 or not isinstance(cut[0], Text):
            return Verdict.fail(check, "expected one truncated text value", turn_index)
        got, full = _norm(cut[0].value), _norm(want.value)
        if not got or got == full or not full.startswith(got):
            return Verdict.fail(check, f"{cut[0].value!r} is not a strict prefix of the planned value", turn_index)
    elif kind == "answer_about_another_slot":
        if not sets:
            return Verdict.fail(check, "no assignment", turn_index)
        if any(s == target for _, s, _ in sets):
            return Verdict.fail(check, "assignment targets the requested slot", turn_index)
    return Verdict.ok()


# ------------------------------------------------------------ post filters


def _planned_intents(record: ConversationRecord) -> list[str]:
    if record.plan and "intent_sequence" in record.plan:
        return list(record.plan["intent_sequence"])
    return []


def post_filters(record: ConversationRecord) -> Verdict:
    """Record-level defects: unflagged overwrite, empty string, hint, unfinished intent."""
    reasons = []
    state: dict[str, dict] = {}
    bound: dict[str, str] = {}
    performed: set[str] = set()
    last_phenomenon = None
    for i, t in enumerate(record.turns):
        if t.kind == "user":
            last_phenomenon = t.phenomenon
        elif t.kind == "signal" and isinstance(t.signal, (Performed, QueryResult)):
            performed.add(bound.get(t.signal.var, ""))
        elif t.kind == "system":
            for c in t.commands:
                if (isinstance(c, IntentCall) and c.intent == "hint") or (isinstance(c, Say) and any(k == "hint" for k, _ in c.args)):
                    reasons.append(Reason("hint_predicted", "hint among system commands", i))
                if isinstance(c, IntentCall):
                    bound[c.var] = c.intent
                    state[c.var] = {}
                for slot, value in command_values(c):
                    if isinstance(value, Text) and not value.value.strip():
                        reasons.append(Reason("empty_string_slot", f"{c.var}.{slot} is empty", i))
                    if isinstance(c, AttrAssign) and slot in state.get(c.var, {}):
                        if last_phenomenon not in ("correction", "in_turn_correction"):
                            reasons.append(Reason("overwrite_without_correction", f"{c.var}.{slot} overwritten", i))
                    state.setdefault(c.var, {})[slot] = value
    if not record.salvaged and "cancellation" not in record.phenomena:
        for name in _planned_intents(record):
            if name not in performed:
                reasons.append(Reason("unperformed_intent", f"{name} never performed", len(record.turns) - 1))
    return Verdict(not reasons, tuple(reasons))


# ----------------------------------------------------------------- replay


def _plan_of(record: ConversationRecord):
    """The record's plan, ``None`` without one; raises ValueError when malformed."""
    if not record.plan:
        return None
    try:
        return plan_from_dict(record.plan)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed plan: {exc!r}") from None


def replay_signals(record: ConversationRecord, catalog: SchemaCatalog) -> Verdict:
    """Re-apply every system turn to a fresh back-end; signals must reproduce."""
    try:
        plan = _plan_of(record)
    except ValueError as exc:
        return Verdict.fail("plan_malformed", str(exc), 0)
    backend = BackendSession(catalog, plan.query_entities if plan else None)
    produced = []
    for i, t in enumerate(record.turns):
        if t.kind == "system":
            for c in t.commands:
                try:
                    sig = backend.apply_command(c)
                except (InvalidTransition, TypeMismatch, UnknownIntent, UnknownVariable) as exc:
                    return Verdict.fail("replay_error", str(exc), i)
                if sig is not None:
                    produced.append(sig)
    recorded = [t.signal for t in record.turns if t.kind == "signal"]
    if produced != recorded:
        at = next((k for k, (a, b) in enumerate(zip(produced, recorded)) if a != b), min(len(produced), len(recorded)))
        index = [i for i, t in enumerate(record.turns) if t.kind == "signal"]
        return Verdict.fail("signal_mismatch", f"signal {at} differs on replay", index[at] if at < len(index) else len(record.turns) - 1)
    return Verdict.ok()


def validate_record(record: ConversationRecord, catalog: SchemaCatalog) -> Verdict:
    """Every offline check on a finished record."""
    verdicts = []
    problems = check_turn_grammar(record.turns)
    if problems:
        verdicts.append(Verdict.fail("turn_grammar", problems[0], 0))
    tokens = [t.phenomenon for t in record.turns if t.kind == "user" and t.phenomenon]
    if tokens != list(record.phenomena):
        verdicts.append(Verdict.fail("phenomena_list", "record phenomena differ from turn tokens", 0))
    try:
        plan = _plan_of(record)
        malformed = False
    except ValueError as exc:
        verdicts.append(Verdict.fail("plan_malformed", str(exc), 0))
        plan, malformed = None, True
    if not problems and not malformed:
        verdicts.append(replay_signals(record, catalog))
    verdicts.append(post_filters(record))
    if plan is not None and not problems:
        backend = BackendSession(catalog, plan.query_entities)
        for i, t in enumerate(record.turns):
            if t.kind == "user" and t.phenomenon:
                progress = conversation_progress(plan, record.turns[:i])
                p = plan.phenomenon_for(progress.index) if progress.index is not None else None
                if p is None or p.kind != t.phenomenon:
                    verdicts.append(Verdict.fail("phenomenon_unplanned", t.phenomenon, i))
                    continue
                existing = {v: dict(s.provided) for v, s in backend.sessions.items()}
                verdicts.append(
                    phenomenon_signal_check(
                        t, record.turns[i + 1].commands, phenomenon=p, planned=plan.slot_assignments[p.target_intent],
                        existing=existing, turn_index=i + 1,
                    )
                )
            elif t.kind == "system":
                for c in t.commands:
                    try:
                        backend.apply_command(c)
                    except (InvalidTransition, TypeMismatch, UnknownIntent, UnknownVariable):
                        break
    return Verdict.merge(verdicts)


# ----------------------------------------------------------------- salvage


def performed_count(turns) -> int:
    return sum(1 for t in turns if t.kind == "signal" and isinstance(t.signal, (Performed, QueryResult)))


def salvage(aborted, provider: LLMProvider, min_turns: int = SALVAGE_MIN_TURNS, prompt_dir=None) -> ConversationRecord | None:
    """Keep an aborted conversation's prefix when it made enough progress.

    Returns ``None`` (discard) unless at least one intent was performed or the
    prefix has ``min_turns`` turns.  The closing message is appended to the
    final response so the prefix still ends on a response turn.
    """
    prefix = list(aborted.prefix)
    if not prefix or prefix[-1].kind != "response":
        return None
    if performed_count(prefix) < 1 and len(prefix) < min_turns:
        return None
    context = {"conversation": history_lines(prefix), "reason": aborted.reason}
    try:
        closing = " ".join(provider.complete(prompts.render("salvage", context, prompt_dir), DEFAULT_TEMPERATURE).split())
    except ProviderError:
        return None
    if not closing:
        return None
    last = prefix[-1]
    prefix[-1] = TurnRecord("response", text=f"{last.text} {closing}")
    return ConversationRecord(
        id="",
        turns=prefix,
        phenomena=[t.phenomenon for t in prefix if t.kind == "user" and t.phenomenon],
        salvaged=True,
    )
