"""Conversation planning: intent sequence, slot values, phenomena, and rules."""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

from . import prompts
from .backend import EntityStore
from .dsl import AttrAssign, Boolean, Entity, Integer, Number, Text, parse_command, parse_value, serialize_value
from .errors import CommandSyntaxError, ConfigError, ParseError, TypeMismatch, UnknownIntent
from .providers import DEFAULT_TEMPERATURE, LLMProvider, with_retries
from .schema import IntentSchema, SchemaCatalog, SlotValuePool, conforms, parse_slot_lines, schema_context
from .seeding import derive_seed, rng_for

PHENOMENA = (
    "cancellation",
    "asr_early_end",
    "sarcasm",
    "delay_confirmation",
    "answer_about_another_slot",
    "irrelevant_answer",
    "overheard_answer",
    "in_turn_correction",
    "correction",
)
NO_PHENOMENON = "none"

TOKENS = {
    "cancellation": "<CANCEL>",
    "asr_early_end": "<ASR_END>",
    "sarcasm": "<SARCASM>",
    "delay_confirmation": "<DELAY_CONFIRM>",
    "answer_about_another_slot": "<OTHER_SLOT>",
    "irrelevant_answer": "<IRRELEVANT>",
    "overheard_answer": "<OVERHEARD>",
    "in_turn_correction": "<INTURN_CORRECTION>",
    "correction": "<CORRECTION>",
}
TOKEN_KINDS = {token: kind for kind, token in TOKENS.items()}

ON_SLOT_REQUEST = "on_slot_request"
ON_CONFIRMATION_REQUEST = "on_confirmation_request"
ANYWHERE = "anywhere"

TRIGGERS = {
    "cancellation": ON_CONFIRMATION_REQUEST,
    "delay_confirmation": ON_CONFIRMATION_REQUEST,
    "asr_early_end": ON_SLOT_REQUEST,
    "answer_about_another_slot": ON_SLOT_REQUEST,
    "irrelevant_answer": ON_SLOT_REQUEST,
    "overheard_answer": ON_SLOT_REQUEST,
    "sarcasm": ANYWHERE,
    "in_turn_correction": ANYWHERE,
    "correction": ANYWHERE,
}
SLOT_SCOPED = frozenset(
    {"correction", "in_turn_correction", "answer_about_another_slot", "asr_early_end", "overheard_answer", "irrelevant_answer"}
)
CONFIRMATION_SCOPED = frozenset({"cancellation", "delay_confirmation"})

# Per-kind conversation counts of the released seed data; used as sampling weights.
SEED_PHENOMENON_COUNTS = {
    "cancellation": 12,
    "asr_early_end": 58,
    "sarcasm": 63,
    "delay_confirmation": 76,
    "answer_about_another_slot": 113,
    "irrelevant_answer": 163,
    "overheard_answer": 203,
    "in_turn_correction": 215,
    "correction": 250,
}


@dataclass
class SamplingConfig:
    intent_count_weights: dict = field(default_factory=lambda: {1: 0.55, 2: 0.3, 3: 0.15})
    optional_slot_rate: float = 0.4
    phenomenon_rate: float = 0.252  # 1,077 of 4,277 seed conversations are unhappy
    # 1,153 phenomena over 1,077 unhappy conversations in the seed data
    phenomenon_count_weights: dict = field(default_factory=lambda: {1: 0.93, 2: 0.07})
    phenomenon_weights: dict = field(default_factory=lambda: dict(SEED_PHENOMENON_COUNTS))
    withhold_rate: float = 0.3
    candidate_sample_size: int = 15

    def validate(self) -> None:
        for name in ("optional_slot_rate", "phenomenon_rate", "withhold_rate"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must be a probability, got {p}")
        for name in ("intent_count_weights", "phenomenon_count_weights", "phenomenon_weights"):
            weights = getattr(self, name)
            if not weights or any(w < 0 for w in weights.values()) or sum(weights.values()) <= 0:
                raise ConfigError(f"{name} needs non-negative weights with a positive sum")
        unknown = set(self.phenomenon_weights) - set(PHENOMENA)
        if unknown:
            raise ConfigError(f"unknown phenomena: {sorted(unknown)}")
        if self.candidate_sample_size < 1:
            raise ConfigError("candidate_sample_size must be positive")


@dataclass(frozen=True)
class ConversationShape:
    seed: int
    n_intents: int
    phenomena: tuple[str, ...] = ()


@dataclass(frozen=True)
class Phenomenon:
    kind: str
    target_intent: int
    target_slot: str | None = None
    trigger_turn_hint: str = ANYWHERE
    other_slot: str | None = None  # answer_about_another_slot: the slot answered instead
    retracted_value: object = None  # corrections: the value said first and then taken back

    def __post_init__(self):
        if self.kind not in PHENOMENA:
            raise ValueError(f"unknown phenomenon {self.kind!r}")
        if self.kind in SLOT_SCOPED and not self.target_slot:
            raise ValueError(f"{self.kind} needs a target slot")
        if self.kind in CONFIRMATION_SCOPED and self.trigger_turn_hint != ON_CONFIRMATION_REQUEST:
            raise ValueError(f"{self.kind} must trigger on a confirmation request")

    @property
    def token(self) -> str:
        return TOKENS[self.kind]


@dataclass(frozen=True)
class ConversationPlan:
    seed: int
    intent_sequence: tuple[str, ...]
    slot_assignments: tuple[dict, ...]
    optional_slot_choices: tuple[tuple[str, ...], ...] = ()
    withheld_slots: tuple[tuple[str, ...], ...] = ()
    phenomena: tuple[Phenomenon, ...] = ()
    justifications: tuple = ()
    query_entities: EntityStore = field(default_factory=EntityStore)

    def __post_init__(self):
        if not self.intent_sequence:
            raise ValueError("a plan needs at least one intent")
        n = len(self.intent_sequence)
        if not self.withheld_slots:
            object.__setattr__(self, "withheld_slots", tuple(() for _ in range(n)))
        if not self.justifications:
            object.__setattr__(self, "justifications", tuple(None for _ in range(n)))
        if not self.optional_slot_choices:
            object.__setattr__(self, "optional_slot_choices", tuple(() for _ in range(n)))
        if len(self.slot_assignments) != n:
            raise ValueError("slot_assignments must align with intent_sequence")
        for p in self.phenomena:
            if not 0 <= p.target_intent < n:
                raise ValueError(f"phenomenon targets intent {p.target_intent} outside the plan")
            if p.target_slot and p.target_slot not in self.slot_assignments[p.target_intent]:
                raise ValueError(f"phenomenon targets unplanned slot {p.target_slot}")

    def validate_against(self, catalog: SchemaCatalog) -> None:
        for name, values in zip(self.intent_sequence, self.slot_assignments):
            schema = catalog[name]
            missing = set(schema.mandatory_slots) - set(values)
            if missing:
                raise ValueError(f"{name} plan lacks mandatory slots {sorted(missing)}")

    def opening_slots(self, index: int) -> list[str]:
        """Slots the user volunteers when first asking for the intent."""
        withheld = set(self.withheld_slots[index])
        return [s for s in self.slot_assignments[index] if s not in withheld]

    def phenomenon_for(self, index: int) -> Phenomenon | None:
        for p in self.phenomena:
            if p.target_intent == index:
                return p
        return None


@dataclass(frozen=True)
class Rule:
    turn_scope: str
    instruction: str
    marker: str | None = None
    expected_token: str | None = None
    payload: dict = field(default_factory=dict, compare=True)


@dataclass(frozen=True)
class ConversationRules:
    rules: tuple[Rule, ...]

    def __iter__(self):
        return iter(self.rules)

    def __len__(self):
        return len(self.rules)

    def intent_rules(self) -> list[Rule]:
        return [r for r in self.rules if r.turn_scope.startswith("intent ")]

    def phenomenon_rules(self) -> list[Rule]:
        return [r for r in self.rules if r.marker]


# ------------------------------------------------------------------ shape


def _weighted(rng: random.Random, weights: dict):
    keys = sorted(weights, key=str)
    return rng.choices(keys, weights=[weights[k] for k in keys])[0]


def choose_primary(catalog: SchemaCatalog, root_seed: int, index: int) -> str:
    """Primary intent of conversation ``index``: uniform over transactional intents."""
    names = [i.intent_name for i in catalog.transactional()] or [i.intent_name for i in catalog]
    return rng_for(root_seed, "primary", index).choice(names)


def sample_conversation_shape(catalog: SchemaCatalog, rng_seed: int, config: SamplingConfig) -> ConversationShape:
    rng = random.Random(rng_seed)
    n_intents = min(int(_weighted(rng, config.intent_count_weights)), len(catalog))
    kinds: tuple[str, ...] = ()
    if rng.random() < config.phenomenon_rate:
        count = int(_weighted(rng, config.phenomenon_count_weights))
        kinds = tuple(_weighted(rng, config.phenomenon_weights) for _ in range(count))
    return ConversationShape(rng_seed, n_intents, kinds)


# ---------------------------------------------------------------- stage 3


def candidate_intents(primary: str, catalog: SchemaCatalog, rng: random.Random, size: int) -> list[str]:
    """Same-domain follow-ups first, topped up with a uniform sample of the rest."""
    schema = catalog[primary]
    same = [i.intent_name for i in catalog if i.domain == schema.domain and i.intent_name != primary]
    if len(same) > size:
        same = rng.sample(same, size)
    others = [i.intent_name for i in catalog if i.intent_name != primary and i.intent_name not in same]
    picked = same + rng.sample(others, min(len(others), size - len(same)))
    return sorted(picked)


def plan_intent_sequence(
    primary_intent: str,
    catalog: SchemaCatalog,
    provider: LLMProvider,
    length: int,
    rng: random.Random | None = None,
    sample_size: int = 15,
    prompt_dir=None,
) -> list[str]:
    if primary_intent not in catalog:
        raise UnknownIntent(primary_intent)
    if length <= 1:
        return [primary_intent]
    rng = rng or random.Random(0)
    offered = candidate_intents(primary_intent, catalog, rng, sample_size)
    context = {
        "primary": primary_intent,
        "domain": catalog[primary_intent].domain,
        "length": length,
        "candidates": [{"intent": n, "domain": catalog[n].domain, "description": catalog[n].description} for n in offered],
    }
    reply = provider.complete(prompts.render(3, context, prompt_dir), DEFAULT_TEMPERATURE)
    names = [n.strip() for n in reply.strip().split(",") if n.strip()]
    if not names or names[0] != primary_intent:
        raise ParseError(f"sequence must start with {primary_intent}: {reply!r}")
    allowed = set(offered)
    for name in names[1:]:
        if name not in allowed:
            raise UnknownIntent(name)
    if len(names) != length:
        raise ParseError(f"expected {length} intents, got {len(names)}")
    if len(set(names)) != len(names):
        raise ParseError("intent sequence repeats an intent")
    return names


# ------------------------------------------------------------- stages 4-7


def _checked_mapping(schema: IntentSchema, parsed: dict, keys) -> dict:
    keys = list(keys)
    if set(parsed) != set(keys):
        raise ParseError(f"reply slots {sorted(parsed)} differ from expected {sorted(keys)}")
    for slot, value in parsed.items():
        if not conforms(schema.slot(slot), value):
            raise TypeMismatch(f"{schema.intent_name}.{slot} does not accept {value!r}")
    return {k: parsed[k] for k in keys}


def _serialized(values: dict) -> dict:
    return {k: serialize_value(v) for k, v in values.items()}


def refine_slot_values(intent: IntentSchema, draft_values: dict, provider: LLMProvider, prompt_dir=None) -> dict:
    """Stage 4: full replacement mapping over the same keys."""
    for slot, value in draft_values.items():
        if not conforms(intent.slot(slot), value):
            raise TypeMismatch(f"draft {intent.intent_name}.{slot}={value!r} does not type-check")
    if not draft_values:
        return {}
    context = {"intent": schema_context(intent), "values": _serialized(draft_values)}
    reply = provider.complete(prompts.render(4, context, prompt_dir), DEFAULT_TEMPERATURE)
    return _checked_mapping(intent, parse_slot_lines(reply), draft_values)


def justify_followup(history_summary: str, next_intent: IntentSchema, provider: LLMProvider, prompt_dir=None) -> str:
    """Stage 5: one paragraph; further paragraphs are dropped."""
    context = {"history": history_summary, "next_intent": next_intent.intent_name, "description": next_intent.description}
    reply = provider.complete(prompts.render(5, context, prompt_dir), DEFAULT_TEMPERATURE)
    paragraphs = [p.strip() for p in reply.strip().split("\n\n") if p.strip()]
    if not paragraphs:
        raise ParseError("empty justification")
    return " ".join(paragraphs[0].split())


def followup_slot_values(
    next_intent: IntentSchema, justification: str, provider: LLMProvider, slots, pool: SlotValuePool | None = None, prompt_dir=None
) -> dict:
    """Stage 6: values for a follow-up intent's chosen slots."""
    slots = list(slots)
    if not slots:
        return {}
    candidates = {}
    if pool is not None:
        candidates = {s: [serialize_value(v) for v in pool.values_per_slot.get(s, [])] for s in slots}
    context = {"intent": schema_context(next_intent), "slots": slots, "justification": justification, "candidates": candidates}
    reply = provider.complete(prompts.render(6, context, prompt_dir), DEFAULT_TEMPERATURE)
    return _checked_mapping(next_intent, parse_slot_lines(reply), slots)


def harmonize_slot_values(plan: ConversationPlan, catalog: SchemaCatalog, provider: LLMProvider, prompt_dir=None) -> ConversationPlan:
    """Stage 7: value edits across intents; intents and key sets never change."""
    context = {
        "intents": [
            {"var": f"x{i}", "intent": name, "values": _serialized(values)}
            for i, (name, values) in enumerate(zip(plan.intent_sequence, plan.slot_assignments))
        ]
    }
    reply = provider.complete(prompts.render(7, context, prompt_dir), DEFAULT_TEMPERATURE).strip()
    if not reply or reply.upper() == "NO CHANGE":
        return plan
    assignments = [dict(v) for v in plan.slot_assignments]
    for line in reply.splitlines():
        if not line.strip():
            continue
        try:
            cmd = parse_command(line)
        except CommandSyntaxError as exc:
            raise ParseError(f"harmonize reply: {exc}") from None
        if not isinstance(cmd, AttrAssign):
            raise ParseError(f"harmonize reply may only edit values: {line!r}")
        index = int(cmd.var[1:])
        if index >= len(assignments) or cmd.slot not in assignments[index]:
            raise ParseError(f"harmonize reply edits unknown slot {cmd.var}.{cmd.slot}")
        if not conforms(catalog[plan.intent_sequence[index]].slot(cmd.slot), cmd.value):
            raise ParseError(f"harmonize reply mistypes {cmd.var}.{cmd.slot}")
        assignments[index][cmd.slot] = cmd.value
    return replace(plan, slot_assignments=tuple(assignments))


# ----------------------------------------------------------------- stage 8


def entity_required_fields(catalog: SchemaCatalog, entity_name: str) -> list[str]:
    """Slots mandatory in every transactional intent producing this entity."""
    producers = catalog.producers(entity_name)
    if not producers:
        return []
    required = [s for s in producers[0].mandatory_slots]
    for other in producers[1:]:
        required = [s for s in required if s in other.mandatory_slots]
    return required


def generate_query_entities(
    plan: ConversationPlan, catalog: SchemaCatalog, provider: LLMProvider, pools: dict | None = None, prompt_dir=None
) -> EntityStore:
    queries = {}
    for name, values in zip(plan.intent_sequence, plan.slot_assignments):
        schema = catalog[name]
        if schema.kind == "query" and schema.entity_name not in queries:
            queries[schema.entity_name] = (schema, values)
    store = EntityStore()
    if not queries:
        return store
    context = {"entity_types": []}
    for entity_name, (schema, filters) in queries.items():
        pool = (pools or {}).get(schema.intent_name)
        context["entity_types"].append(
            {
                "entity_name": entity_name,
                "query_intent": schema.intent_name,
                "fields": {s.name: s.value_type for s in schema.slots},
                "required": entity_required_fields(catalog, entity_name),
                "filters": _serialized(filters),
                "candidates": {k: [serialize_value(v) for v in vs] for k, vs in pool.values_per_slot.items()} if pool else {},
            }
        )
    reply = provider.complete(prompts.render(8, context, prompt_dir), DEFAULT_TEMPERATURE)
    for lineno, raw in enumerate(reply.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        entity_name, sep, rest = line.partition(":")
        entity_name = entity_name.strip()
        if not sep or entity_name not in queries:
            raise ParseError(f"line {lineno}: unknown entity type in {line!r}")
        try:
            record = parse_value(rest.strip(), allow_entities=True)
        except CommandSyntaxError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
        if not isinstance(record, Entity):
            raise ParseError(f"line {lineno}: expected entity(...)")
        schema = queries[entity_name][0]
        fields = dict(record.fields)
        for slot in entity_required_fields(catalog, entity_name):
            if slot not in fields:
                raise ParseError(f"line {lineno}: entity lacks required field {slot!r}")
        for slot, value in fields.items():
            if not schema.has_slot(slot) or not conforms(schema.slot(slot), value):
                raise ParseError(f"line {lineno}: bad field {slot}={value!r}")
        store.add(entity_name, record.fields)
    for entity_name in queries:
        if not store.entities.get(entity_name):
            raise ParseError(f"no entities generated for {entity_name}")
    return store


# ------------------------------------------------------- phenomenon placement


def _has_request(schema: IntentSchema, withheld: set) -> bool:
    return bool(withheld & set(schema.mandatory_slots)) or (schema.kind == "transactional" and schema.requires_confirmation)


def _distractor(spec, planned, pool: SlotValuePool | None, rng: random.Random):
    options = [v for v in (pool.values_per_slot.get(spec.name, []) if pool else []) if v != planned and conforms(spec, v)]
    if options:
        return rng.choice(options)
    if isinstance(planned, Boolean):
        return Boolean(not planned.value)
    if isinstance(planned, Integer):
        return Integer(planned.value + 1)
    if isinstance(planned, Number):
        return Number(planned.value + 1.0)
    return None


def _candidates(kind, i, schema, values, withheld, pool, rng):
    """Possible (target_slot, other_slot, retracted_value, extra_withheld) placements on intent i.

    Kinds that need a later system question can create one by withholding a
    mandatory slot (``extra_withheld``) when the intent has none yet.
    """
    mandatory = [s for s in schema.mandatory_slots if s in values]
    opening = [s for s in values if s not in withheld]
    if kind in ("overheard_answer", "irrelevant_answer"):
        return [(s, None, None, None) for s in mandatory]
    if kind == "answer_about_another_slot":
        optional = [s for s in values if s not in schema.mandatory_slots]
        return [(a, b, None, None) for a in mandatory for b in optional]
    if kind == "asr_early_end":
        return [
            (s, None, None, None)
            for s in mandatory
            if schema.slot(s).value_type == "text" and isinstance(values[s], Text) and len(values[s].value.split()) >= 2
        ]
    if kind == "in_turn_correction":
        out = []
        for s in opening:
            alt = _distractor(schema.slot(s), values[s], pool, rng)
            if alt is not None:
                out.append((s, None, alt, None))
        return out
    if kind == "correction":
        out = []
        for force in [None] if _has_request(schema, withheld) else mandatory:
            for s in opening:
                alt = _distractor(schema.slot(s), values[s], pool, rng) if s != force else None
                if alt is not None:
                    out.append((s, None, alt, force))
        return out
    if kind == "sarcasm":
        if _has_request(schema, withheld):
            return [(None, None, None, None)]
        return [(None, None, None, s) for s in mandatory]
    if kind in CONFIRMATION_SCOPED:
        return [(None, None, None, None)] if schema.kind == "transactional" and schema.requires_confirmation else []
    return []


def place_phenomena(
    kinds,
    intent_sequence,
    slot_assignments,
    catalog: SchemaCatalog,
    rng: random.Random,
    config: SamplingConfig,
    pools: dict | None = None,
):
    """Choose withheld slots, then attach at most one phenomenon per intent.

    A drawn kind with no valid placement is redrawn among the kinds that have
    one (by configured weight); it is dropped only if no kind fits anywhere.
    """
    withheld = []
    for name, values in zip(intent_sequence, slot_assignments):
        schema = catalog[name]
        withheld.append({s for s in schema.mandatory_slots if s in values and rng.random() < config.withhold_rate})
    placed: list[Phenomenon] = []
    used: set[int] = set()
    for kind in kinds:
        def options_for(k):
            opts = []
            for i, (name, values) in enumerate(zip(intent_sequence, slot_assignments)):
                if i in used:
                    continue
                pool = (pools or {}).get(name)
                for target, other, alt, force in _candidates(k, i, catalog[name], values, withheld[i], pool, rng):
                    opts.append((i, target, other, alt, force))
            return opts

        options = options_for(kind)
        if not options:
            viable = {k: w for k, w in config.phenomenon_weights.items() if w > 0 and options_for(k)}
            if not viable:
                continue
            kind = _weighted(rng, viable)
            options = options_for(kind)
        i, target, other, alt, force = options[rng.randrange(len(options))]
        if force:
            withheld[i].add(force)
        if TRIGGERS[kind] == ON_SLOT_REQUEST:
            withheld[i].add(target)
            if other:
                withheld[i].add(other)
        used.add(i)
        placed.append(Phenomenon(kind, i, target, TRIGGERS[kind], other, alt))
    ordered = []
    for i, values in enumerate(slot_assignments):
        ordered.append(tuple(s for s in values if s in withheld[i]))
    return tuple(placed), tuple(ordered)


# --------------------------------------------------------- whole-plan driver


def _summary(intent_sequence, slot_assignments) -> str:
    parts = []
    for name, values in zip(intent_sequence, slot_assignments):
        args = ", ".join(f"{k}={serialize_value(v)}" for k, v in values.items())
        parts.append(f"{name}({args})")
    return "The user has already asked to: " + "; ".join(parts)


def build_plan(
    primary_intent: str,
    catalog: SchemaCatalog,
    pools: dict,
    provider: LLMProvider,
    config: SamplingConfig,
    seed: int,
    retries: int = 2,
    prompt_dir=None,
) -> ConversationPlan:
    """Stages 3-8 for one conversation."""
    shape = sample_conversation_shape(catalog, derive_seed(seed, "shape"), config)
    rng = random.Random(derive_seed(seed, "plan"))
    sequence = with_retries(
        lambda: plan_intent_sequence(primary_intent, catalog, provider, shape.n_intents, random.Random(derive_seed(seed, "candidates")), config.candidate_sample_size, prompt_dir),
        retries,
        (ParseError, UnknownIntent),
    )
    keys = []
    optional_choices = []
    for name in sequence:
        schema = catalog[name]
        included = [s for s in schema.optional_slots if rng.random() < config.optional_slot_rate]
        optional_choices.append(tuple(included))
        keys.append([s.name for s in schema.slots if s.mandatory or s.name in included])

    def draft(name, slots):
        pool = pools.get(name)
        out = {}
        for s in slots:
            options = pool.values_per_slot.get(s) if pool else None
            if not options:
                raise ParseError(f"no candidate values for {name}.{s}")
            out[s] = rng.choice(options)
        return out

    assignments: list[dict] = []
    justifications: list = []
    for i, name in enumerate(sequence):
        schema = catalog[name]
        if i == 0:
            values = draft(name, keys[0])
            justifications.append(None)
        else:
            reason = with_retries(lambda: justify_followup(_summary(sequence[:i], assignments), schema, provider, prompt_dir), retries)
            justifications.append(reason)
            values = with_retries(
                lambda: followup_slot_values(schema, reason, provider, keys[i], pools.get(name), prompt_dir), retries, (ParseError, TypeMismatch)
            )
        values = with_retries(lambda: refine_slot_values(schema, values, provider, prompt_dir), retries, (ParseError, TypeMismatch))
        assignments.append(values)

    plan = ConversationPlan(
        seed=seed,
        intent_sequence=tuple(sequence),
        slot_assignments=tuple(assignments),
        optional_slot_choices=tuple(optional_choices),
        justifications=tuple(justifications),
    )
    if len(sequence) > 1:
        plan = with_retries(lambda: harmonize_slot_values(plan, catalog, provider, prompt_dir), retries)
    phenomena, withheld = place_phenomena(shape.phenomena, plan.intent_sequence, plan.slot_assignments, catalog, rng, config, pools)
    plan = replace(plan, phenomena=phenomena, withheld_slots=withheld)
    store = with_retries(lambda: generate_query_entities(plan, catalog, provider, pools, prompt_dir), retries)
    plan = replace(plan, query_entities=store)
    plan.validate_against(catalog)
    return plan


# ------------------------------------------------------------------ rules

PREAMBLE = (
    Rule("all", "Talk like a real person using a voice assistant: short, natural messages, one step at a time."),
    Rule("all", "Only ask for the intents in this plan, in order, and only use the slot values given here."),
)

_PHENOMENON_TEXT = {
    "cancellation": "When asked to confirm {intent}, cancel it instead.",
    "asr_early_end": "When asked for {slot}, your message is cut off part-way through the value.",
    "sarcasm": "The first time you are asked something about {intent}, reply sarcastically without giving any information.",
    "delay_confirmation": "When asked to confirm {intent}, say you are not ready yet; confirm in your next message.",
    "answer_about_another_slot": "When asked for {slot}, give the {other} instead.",
    "irrelevant_answer": "When asked for {slot}, reply with something irrelevant.",
    "overheard_answer": "When asked for {slot}, reply as if talking to someone else nearby.",
    "in_turn_correction": "When you first give the {slot}, say {retracted} and correct yourself to {value} in the same message.",
    "correction": "Give the {slot} as {retracted} at first; in your next message correct it to {value}.",
}


def compile_conversation_rules(plan: ConversationPlan) -> ConversationRules:
    rules = list(PREAMBLE)
    for i, name in enumerate(plan.intent_sequence):
        values = plan.slot_assignments[i]
        opening = plan.opening_slots(i)
        withheld = list(plan.withheld_slots[i])
        text = f"Intent {i + 1} of {len(plan.intent_sequence)}: {name}."
        if plan.justifications[i]:
            text += f" Reason: {plan.justifications[i]}"
        if opening:
            text += " Mention at the start: " + ", ".join(f"{s}={serialize_value(values[s])}" for s in opening) + "."
        if withheld:
            text += " Give only when asked: " + ", ".join(f"{s}={serialize_value(values[s])}" for s in withheld) + "."
        payload = {
            "index": i,
            "intent": name,
            "values": _serialized(values),
            "opening": opening,
            "withheld": withheld,
            "justification": plan.justifications[i],
        }
        rules.append(Rule(f"intent {i}", text, payload=payload))
    for p in plan.phenomena:
        values = plan.slot_assignments[p.target_intent]
        text = _PHENOMENON_TEXT[p.kind].format(
            intent=plan.intent_sequence[p.target_intent],
            slot=p.target_slot,
            other=p.other_slot,
            value=serialize_value(values[p.target_slot]) if p.target_slot else "",
            retracted=serialize_value(p.retracted_value) if p.retracted_value is not None else "",
        )
        text += f" End that message with {p.token}."
        payload = {
            "kind": p.kind,
            "intent_index": p.target_intent,
            "slot": p.target_slot,
            "other_slot": p.other_slot,
            "trigger": p.trigger_turn_hint,
            "value": serialize_value(values[p.target_slot]) if p.target_slot else None,
            "retracted": serialize_value(p.retracted_value) if p.retracted_value is not None else None,
        }
        rules.append(Rule(f"{p.trigger_turn_hint} intent {p.target_intent}", text, p.kind, p.token, payload))
    return ConversationRules(tuple(rules))


# ---------------------------------------------------------- serialization


def phenomenon_to_dict(p: Phenomenon) -> dict:
    return {
        "kind": p.kind,
        "target_intent": p.target_intent,
        "target_slot": p.target_slot,
        "trigger_turn_hint": p.trigger_turn_hint,
        "other_slot": p.other_slot,
        "retracted_value": serialize_value(p.retracted_value) if p.retracted_value is not None else None,
    }


def phenomenon_from_dict(d: dict) -> Phenomenon:
    retracted = d.get("retracted_value")
    return Phenomenon(
        d["kind"],
        int(d["target_intent"]),
        d.get("target_slot"),
        d.get("trigger_turn_hint", TRIGGERS[d["kind"]]),
        d.get("other_slot"),
        parse_value(retracted) if retracted is not None else None,
    )


def store_to_dict(store: EntityStore) -> dict:
    return {name: [serialize_value(e) for e in records] for name, records in store.entities.items()}


def store_from_dict(d: dict) -> EntityStore:
    return EntityStore({name: [parse_value(e, allow_entities=True) for e in records] for name, records in d.items()})


def plan_to_dict(plan: ConversationPlan, rules: ConversationRules | None = None) -> dict:
    out = {
        "intent_sequence": list(plan.intent_sequence),
        "slot_assignments": [_serialized(v) for v in plan.slot_assignments],
        "optional_slot_choices": [list(c) for c in plan.optional_slot_choices],
        "withheld_slots": [list(w) for w in plan.withheld_slots],
        "phenomena": [phenomenon_to_dict(p) for p in plan.phenomena],
        "justifications": list(plan.justifications),
        "entities": store_to_dict(plan.query_entities),
        "seed": plan.seed,
    }
    if rules is not None:
        out["rules"] = [
            {"turn_scope": r.turn_scope, "instruction": r.instruction, "marker": r.marker, "expected_token": r.expected_token}
            for r in rules
        ]
    return out


def plan_from_dict(d: dict) -> ConversationPlan:
    return ConversationPlan(
        seed=int(d["seed"]),
        intent_sequence=tuple(d["intent_sequence"]),
        slot_assignments=tuple({k: parse_value(v) for k, v in a.items()} for a in d["slot_assignments"]),
        optional_slot_choices=tuple(tuple(c) for c in d.get("optional_slot_choices", ())),
        withheld_slots=tuple(tuple(w) for w in d.get("withheld_slots", ())),
        phenomena=tuple(phenomenon_from_dict(p) for p in d.get("phenomena", ())),
        justifications=tuple(d.get("justifications", ())),
        query_entities=store_from_dict(d.get("entities", {})),
    )
