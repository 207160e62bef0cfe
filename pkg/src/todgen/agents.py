"""User, System, string-extraction and Response agents, and the turn loop."""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import prompts
from .backend import BackendSession
from .dataset import ConversationRecord, TurnRecord, check_turn_grammar
from .dsl import (
    AttrAssign,
    AttrRef,
    Confirm,
    ConfirmationRequired,
    IntentCall,
    MissingSlots,
    Performed,
    Placeholder,
    QueryResult,
    Say,
    Text,
    VarRef,
    canonicalize,
    has_placeholder,
    parse_commands,
    parse_value,
    serialize_command,
    serialize_signal,
    serialize_value,
)
from .errors import (
    AbortedConversation,
    CommandSyntaxError,
    DanglingVarRef,
    InvalidTransition,
    MissingToken,
    ParseError,
    ProviderError,
    SpanViolation,
    TypeMismatch,
    UnknownIntent,
    UnknownVariable,
)
from .planner import TOKENS, ConversationPlan, ConversationRules, Phenomenon
from .providers import DEFAULT_TEMPERATURE, LLMProvider, with_retries
from .schema import SchemaCatalog, schema_context

ROLES = ("user", "system", "extract", "response", "validator", "closing")
_TOKEN_RE = re.compile("|".join(re.escape(t) for t in TOKENS.values()))


@dataclass(frozen=True)
class Limits:
    max_turns: int = 60
    retries: int = 2
    max_system_steps: int = 4


def provider_for(providers, role: str) -> LLMProvider:
    """``providers`` is one provider for every role or a role -> provider mapping."""
    if hasattr(providers, "complete"):
        return providers
    if role in providers:
        return providers[role]
    if "default" in providers:
        return providers["default"]
    raise KeyError(f"no provider for role {role!r}")


# ------------------------------------------------------------- history views


def history_lines(turns, include_internal: bool = True) -> list[str]:
    """Plain-text transcript.  The user agent sees only user and response turns."""
    lines = []
    for t in turns:
        if t.kind == "user":
            lines.append(f"User: {t.text}")
        elif t.kind == "response":
            lines.append(f"Assistant: {t.text}")
        elif not include_internal:
            continue
        elif t.kind == "system":
            lines.extend(f"System: {serialize_command(c)}" for c in t.commands)
        elif t.kind == "signal":
            lines.append(f"Signal: {serialize_signal(t.signal)}")
    return lines


def known_vars(turns) -> list[str]:
    out = []
    for t in turns:
        if t.kind == "system":
            out.extend(c.var for c in t.commands if isinstance(c, IntentCall) and c.var not in out)
    return out


def last_user_text(turns) -> str:
    for t in reversed(turns):
        if t.kind == "user":
            return t.text
    raise ValueError("history has no user turn")


# ----------------------------------------------------------------- progress


@dataclass(frozen=True)
class Progress:
    index: int | None
    step: str  # open | answer | confirm | done
    var: str | None = None
    requested: tuple = ()
    consumed: frozenset = frozenset()
    due: Phenomenon | None = None


def _current(plan: ConversationPlan, var_of: dict, latest: dict, cancelled: set):
    for i in range(len(plan.intent_sequence)):
        if i in cancelled:
            continue
        var = var_of.get(i)
        if var is None or not isinstance(latest.get(var), (Performed, QueryResult)):
            return i
    return None


def conversation_progress(plan: ConversationPlan, turns) -> Progress:
    """Where the user is in the plan, replayed from the turns so far.

    A user turn carrying a phenomenon consumes the phenomenon of the intent that
    was current at that moment; a consumed cancellation closes its intent.
    """
    index_of = {name: i for i, name in enumerate(plan.intent_sequence)}
    var_of: dict[int, str] = {}
    latest: dict = {}
    consumed: set[int] = set()
    cancelled: set[int] = set()
    for t in turns:
        if t.kind == "user" and t.phenomenon:
            cur = _current(plan, var_of, latest, cancelled)
            if cur is not None:
                consumed.add(cur)
                if t.phenomenon == "cancellation":
                    cancelled.add(cur)
        elif t.kind == "system":
            for c in t.commands:
                if isinstance(c, IntentCall) and c.intent in index_of and index_of[c.intent] not in var_of:
                    var_of[index_of[c.intent]] = c.var
        elif t.kind == "signal" and hasattr(t.signal, "var"):
            latest[t.signal.var] = t.signal
    index = _current(plan, var_of, latest, cancelled)
    if index is None:
        return Progress(None, "done", consumed=frozenset(consumed))
    var = var_of.get(index)
    requested: tuple = ()
    if var is None:
        step = "open"
    elif isinstance(latest.get(var), ConfirmationRequired):
        step = "confirm"
    else:
        step = "answer"
        sig = latest.get(var)
        requested = sig.slots if isinstance(sig, MissingSlots) else ()
    p = plan.phenomenon_for(index)
    due = None
    if p is not None and index not in consumed:
        if p.kind == "in_turn_correction":
            due = p if step == "open" else None
        elif p.kind in ("correction", "sarcasm"):
            due = p if step in ("answer", "confirm") else None
        elif p.trigger_turn_hint == "on_slot_request":
            due = p if step == "answer" and p.target_slot in requested else None
        elif p.trigger_turn_hint == "on_confirmation_request":
            due = p if step == "confirm" else None
    return Progress(index, step, var, tuple(requested), frozenset(consumed), due)


def phenomenon_payload(plan: ConversationPlan, p: Phenomenon) -> dict:
    values = plan.slot_assignments[p.target_intent]
    return {
        "kind": p.kind,
        "token": p.token,
        "slot": p.target_slot,
        "other_slot": p.other_slot,
        "value": serialize_value(values[p.target_slot]) if p.target_slot else None,
        "other_value": serialize_value(values[p.other_slot]) if p.other_slot else None,
        "retracted": serialize_value(p.retracted_value) if p.retracted_value is not None else None,
    }


def active_context(plan: ConversationPlan, progress: Progress) -> dict:
    """The part of the plan the user must act on now."""
    if progress.index is None:
        return {"step": "done"}
    i = progress.index
    values = dict(plan.slot_assignments[i])
    p = plan.phenomenon_for(i)
    if p is not None and p.kind == "correction" and i not in progress.consumed:
        values[p.target_slot] = p.retracted_value  # said first, corrected later
    return {
        "intent_index": i,
        "intent": plan.intent_sequence[i],
        "step": progress.step,
        "requested": list(progress.requested),
        "values": {k: serialize_value(v) for k, v in values.items()},
        "opening": plan.opening_slots(i),
        "justification": plan.justifications[i],
        "phenomenon": phenomenon_payload(plan, progress.due) if progress.due else None,
    }


# ------------------------------------------------------------------ stage 9


def user_turn(rules: ConversationRules, history, provider: LLMProvider, plan: ConversationPlan, prompt_dir=None) -> TurnRecord:
    """Next user utterance; a due phenomenon's token is required and stripped."""
    progress = conversation_progress(plan, history)
    if progress.index is None:
        raise ValueError("every planned intent is already finished")
    context = {
        "rules": [r.instruction for r in rules],
        "conversation": history_lines(history, include_internal=False),
        "active": active_context(plan, progress),
    }
    reply = provider.complete(prompts.render(9, context, prompt_dir), DEFAULT_TEMPERATURE)
    found = _TOKEN_RE.findall(reply)
    due = progress.due
    if due is not None and due.token not in found:
        raise MissingToken(f"reply lacks {due.token}")
    stray = [t for t in found if due is None or t != due.token]
    if stray:
        raise ParseError(f"unexpected special tokens {stray}")
    text = " ".join(_TOKEN_RE.sub(" ", reply).split())
    if not text:
        raise ParseError("empty user utterance")
    return TurnRecord("user", text=text, phenomenon=due.kind if due else None)


# ----------------------------------------------------------------- stage 10


def _check_slot_value(schema, slot: str, value) -> None:
    if not schema.has_slot(slot):
        raise ParseError(f"{schema.intent_name} has no slot {slot!r}")
    if isinstance(value, (VarRef, AttrRef)):
        return
    spec = schema.slot(slot)
    if spec.is_string and not isinstance(value, Placeholder):
        raise ParseError(f"string slot {schema.intent_name}.{slot} must be {serialize_value(Placeholder())}")
    if not spec.is_string and has_placeholder(value):
        raise ParseError(f"non-string slot {schema.intent_name}.{slot} cannot hold a placeholder")


def parse_labels(reply: str, history, catalog: SchemaCatalog, tools=None) -> list:
    """Parse and contract-check a labelling reply; returns canonical commands."""
    cmds = parse_commands([line for line in reply.splitlines() if line.strip()])
    if not cmds:
        raise ParseError("no commands in labelling reply")
    allowed = {t.intent_name for t in tools} if tools is not None else None
    bound = {}
    for t in history:
        if t.kind == "system":
            bound.update({c.var: c.intent for c in t.commands if isinstance(c, IntentCall)})
    for c in cmds:
        if isinstance(c, IntentCall):
            if c.intent not in catalog or (allowed is not None and c.intent not in allowed):
                raise ParseError(f"unknown tool {c.intent!r}")
            schema = catalog[c.intent]
            for slot, value in c.args:
                _check_slot_value(schema, slot, value)
            bound[c.var] = c.intent
        elif isinstance(c, AttrAssign):
            if c.var not in bound:
                raise ParseError(f"assignment to undefined variable {c.var}")
            _check_slot_value(catalog[bound[c.var]], c.slot, c.value)
        elif isinstance(c, Confirm) and c.var not in bound:
            raise ParseError(f"confirm of undefined variable {c.var}")
    try:
        return canonicalize(cmds, known_vars(history))
    except DanglingVarRef as exc:
        raise ParseError(str(exc)) from None


def label_context(history, catalog: SchemaCatalog, tools=None) -> dict:
    tools = list(tools) if tools is not None else list(catalog)
    return {"tools": [schema_context(s) for s in tools], "conversation": history_lines(history)}


def system_label(history, provider: LLMProvider, catalog: SchemaCatalog, tools=None, prompt_dir=None) -> list:
    """Stage 10: commands for the latest user or signal turn, strings as placeholders."""
    if not history or history[-1].kind not in ("user", "signal"):
        raise ValueError("labelling needs a history ending in a user or signal turn")
    reply = provider.complete(prompts.render(10, label_context(history, catalog, tools), prompt_dir), DEFAULT_TEMPERATURE)
    return parse_labels(reply, history, catalog, tools)


# ----------------------------------------------------------------- stage 11


def placeholder_slots(commands) -> list[str]:
    out = []
    for c in commands:
        if isinstance(c, (IntentCall, Say)):
            out.extend(slot for slot, v in c.args if isinstance(v, Placeholder))
        elif isinstance(c, AttrAssign) and isinstance(c.value, Placeholder):
            out.append(c.slot)
    return out


def _norm(s: str) -> str:
    return " ".join(s.split())


def _fill(commands, spans: list[str]) -> list:
    it = iter(spans)

    def sub(v):
        return Text(next(it)) if isinstance(v, Placeholder) else v

    out = []
    for c in commands:
        if isinstance(c, IntentCall):
            out.append(IntentCall(c.var, c.intent, tuple((k, sub(v)) for k, v in c.args)))
        elif isinstance(c, Say):
            out.append(Say(tuple((k, sub(v)) for k, v in c.args)))
        elif isinstance(c, AttrAssign):
            out.append(AttrAssign(c.var, c.slot, sub(c.value)))
        else:
            out.append(c)
    return out


def _parse_spans(reply: str, expected: list[str]) -> list[str]:
    spans = []
    for raw in reply.splitlines():
        if not raw.strip():
            continue
        name, sep, rest = raw.partition("=")
        if not sep:
            raise ParseError(f"expected <slot> = \"<span>\", got {raw.strip()!r}")
        try:
            value = parse_value(rest.strip())
        except CommandSyntaxError as exc:
            raise ParseError(str(exc)) from None
        if not isinstance(value, Text):
            raise ParseError(f"span for {name.strip()} must be a string")
        spans.append((name.strip(), value.value))
    if [n for n, _ in spans] != expected:
        raise ParseError(f"spans {[n for n, _ in spans]} do not match placeholders {expected}")
    return [s for _, s in spans]


def extract_string_slots(commands, user_text: str, provider: LLMProvider, attempts: int = 2, prompt_dir=None) -> list:
    """Stage 11: fill each placeholder with a span of the user's words.

    A reply that is unparseable or names a non-span is re-asked; after
    ``attempts`` tries the last error is raised.
    """
    expected = placeholder_slots(commands)
    if not expected:
        raise ValueError("no placeholders to fill")
    context = {"user_text": user_text, "commands": [serialize_command(c) for c in commands], "placeholders": expected}
    prompt = prompts.render(11, context, prompt_dir)
    haystack = _norm(user_text)
    last: Exception | None = None
    for _ in range(attempts):
        try:
            spans = [_norm(s) for s in _parse_spans(provider.complete(prompt, DEFAULT_TEMPERATURE), expected)]
        except ParseError as exc:
            last = exc
            continue
        bad = [s for s in spans if s not in haystack]
        if not bad:
            return _fill(commands, spans)
        last = SpanViolation(f"{bad[0]!r} is not a span of the user utterance")
    raise last


# ----------------------------------------------------------------- stage 12


def respond(history, last_signal, provider: LLMProvider, prompt_dir=None) -> TurnRecord:
    context = {
        "conversation": history_lines(history),
        "signal": serialize_signal(last_signal) if last_signal is not None else None,
    }
    text = " ".join(provider.complete(prompts.render(12, context, prompt_dir), DEFAULT_TEMPERATURE).split())
    if not text:
        raise ParseError("empty response")
    return TurnRecord("response", text=text)


# ------------------------------------------------------------- turn loop


def cut_prefix(turns) -> list:
    """Turns up to and including the last response."""
    for i in range(len(turns) - 1, -1, -1):
        if turns[i].kind == "response":
            return list(turns[: i + 1])
    return []


_REASONS = (
    (MissingToken, "missing_token"),
    (SpanViolation, "span_violation"),
    (ProviderError, "provider_error"),
    (ParseError, "parse_error"),
)


def run_conversation(
    plan: ConversationPlan,
    rules: ConversationRules,
    catalog: SchemaCatalog,
    providers,
    limits: Limits = Limits(),
    step_validator=None,
    conversation_id: str = "",
    prompt_dir=None,
) -> ConversationRecord:
    """Drive user -> system -> (signal -> system)* -> response until the plan is done.

    ``step_validator(history, commands)`` runs on every labelling step before
    strings are filled and returns a Verdict; a failing verdict aborts.
    """
    from .validation import phenomenon_signal_check  # validation imports this module

    user_p = provider_for(providers, "user")
    system_p = provider_for(providers, "system")
    extract_p = provider_for(providers, "extract")
    response_p = provider_for(providers, "response")
    backend = BackendSession(catalog, plan.query_entities)
    turns: list[TurnRecord] = []

    def abort(reason: str, detail: str = ""):
        raise AbortedConversation(reason, cut_prefix(turns), detail, len(turns))

    def call(fn, retry_on=(ParseError, ProviderError, MissingToken)):
        try:
            return with_retries(fn, limits.retries, retry_on)
        except (ParseError, ProviderError, MissingToken, SpanViolation) as exc:
            reason = next(name for cls, name in _REASONS if isinstance(exc, cls))
            abort(reason, str(exc))

    while True:
        progress = conversation_progress(plan, turns)
        if progress.index is None:
            break
        if len(turns) >= limits.max_turns:
            abort("turn_limit", f"{len(turns)} turns")
        user = call(lambda: user_turn(rules, turns, user_p, plan, prompt_dir))
        turns.append(user)
        phenomenon = plan.phenomenon_for(progress.index) if user.phenomenon else None
        steps = 0
        while True:
            steps += 1
            if steps > limits.max_system_steps:
                abort("system_loop", "too many labelling steps for one user turn")
            cmds = call(lambda: system_label(turns, system_p, catalog, prompt_dir=prompt_dir))
            if step_validator is not None:
                verdict = step_validator(list(turns), cmds)
                if not verdict.passed:
                    abort(verdict.reasons[0].check, verdict.reasons[0].detail)
            if placeholder_slots(cmds):
                text = last_user_text(turns)
                cmds = call(lambda: extract_string_slots(cmds, text, extract_p, 2, prompt_dir), retry_on=(ProviderError,))
            if phenomenon is not None and steps == 1:
                existing = {v: dict(s.provided) for v, s in backend.sessions.items()}
                verdict = phenomenon_signal_check(
                    user, cmds, phenomenon=phenomenon, planned=plan.slot_assignments[phenomenon.target_intent],
                    existing=existing, turn_index=len(turns),
                )
                if not verdict.passed:
                    abort(verdict.reasons[0].check, verdict.reasons[0].detail)
            turns.append(TurnRecord("system", commands=tuple(cmds)))
            signals = []
            for c in cmds:
                try:
                    sig = backend.apply_command(c)
                except (InvalidTransition, TypeMismatch, UnknownIntent, UnknownVariable) as exc:
                    abort("backend_error", str(exc))
                if sig is not None:
                    signals.append(sig)
            turns.extend(TurnRecord("signal", signal=s) for s in signals)
            if not signals:
                break
        last_signal = next((t.signal for t in reversed(turns) if t.kind == "signal"), None)
        if turns[-2].kind != "signal":
            last_signal = None  # the say answered a user turn, not a signal
        turns.append(call(lambda: respond(turns, last_signal, response_p, prompt_dir)))

    cancelled = [t for t in turns if t.kind == "user" and t.phenomenon == "cancellation"]
    backend.finalize(plan.intent_sequence[p.target_intent] for p in plan.phenomena if p.kind == "cancellation" and cancelled)
    problems = check_turn_grammar(turns)
    if problems:
        abort("turn_grammar", problems[0])
    return ConversationRecord(
        id=conversation_id,
        turns=turns,
        phenomena=[t.phenomenon for t in turns if t.kind == "user" and t.phenomenon],
        seed=plan.seed,
    )
