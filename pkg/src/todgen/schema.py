"""Intent schemas, slot value pools, and query-intent derivation."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

from . import prompts
from .dsl import Boolean, Integer, ListOf, Number, Text, parse_value, serialize_value
from .errors import CommandSyntaxError, ParseError, SchemaError, TypeMismatch, UnknownIntent
from .providers import DEFAULT_TEMPERATURE, LLMProvider

VALUE_TYPES = ("text", "integer", "number", "boolean", "date_text", "time_text", "enum_text")
STRING_TYPES = frozenset({"text", "date_text", "time_text"})
SNAKE_RE = re.compile(r"[a-z][a-z0-9]*(?:_[a-z0-9]+)*")


@dataclass(frozen=True)
class SlotSpec:
    name: str
    value_type: str = "text"
    mandatory: bool = False
    allowed_values: tuple[str, ...] | None = None

    def __post_init__(self):
        if not SNAKE_RE.fullmatch(self.name or ""):
            raise ValueError(f"slot name must be lowercase snake-case: {self.name!r}")
        if self.value_type not in VALUE_TYPES:
            raise ValueError(f"unsupported slot type {self.value_type!r}")
        if self.allowed_values is not None:
            object.__setattr__(self, "allowed_values", tuple(self.allowed_values))
        if self.value_type == "enum_text" and not self.allowed_values:
            raise ValueError(f"enum slot {self.name!r} needs allowed values")

    @property
    def is_string(self) -> bool:
        """Free-text slot whose value is copied from a span of the user's words."""
        return self.value_type in STRING_TYPES


@dataclass(frozen=True)
class IntentSchema:
    intent_name: str
    domain: str
    kind: str
    slots: tuple[SlotSpec, ...]
    entity_name: str
    requires_confirmation: bool
    description: str = ""

    def __post_init__(self):
        object.__setattr__(self, "slots", tuple(self.slots))
        for name in (self.intent_name, self.domain, self.entity_name):
            if not SNAKE_RE.fullmatch(name or ""):
                raise ValueError(f"identifier must be lowercase snake-case: {name!r}")
        if self.kind not in ("transactional", "query"):
            raise ValueError(f"kind must be transactional or query, not {self.kind!r}")
        names = [s.name for s in self.slots]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate slot names in {self.intent_name}")

    def slot(self, name: str) -> SlotSpec:
        for s in self.slots:
            if s.name == name:
                return s
        raise TypeMismatch(f"{self.intent_name} has no slot {name!r}")

    def has_slot(self, name: str) -> bool:
        return any(s.name == name for s in self.slots)

    @property
    def mandatory_slots(self) -> list[str]:
        return [s.name for s in self.slots if s.mandatory]

    @property
    def optional_slots(self) -> list[str]:
        return [s.name for s in self.slots if not s.mandatory]


@dataclass(frozen=True)
class SchemaCatalog:
    intents: tuple[IntentSchema, ...]
    domains: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "intents", tuple(self.intents))
        if not self.domains:
            object.__setattr__(self, "domains", tuple(dict.fromkeys(i.domain for i in self.intents)))
        else:
            object.__setattr__(self, "domains", tuple(self.domains))
        names = [i.intent_name for i in self.intents]
        if len(set(names)) != len(names):
            raise ValueError("duplicate intent names in catalog")
        missing = {i.domain for i in self.intents} - set(self.domains)
        if missing:
            raise ValueError(f"intent domains not declared: {sorted(missing)}")
        object.__setattr__(self, "_index", {i.intent_name: i for i in self.intents})

    def __getitem__(self, name: str) -> IntentSchema:
        try:
            return self._index[name]
        except KeyError:
            raise UnknownIntent(name) from None

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __iter__(self):
        return iter(self.intents)

    def __len__(self) -> int:
        return len(self.intents)

    def transactional(self) -> list[IntentSchema]:
        return [i for i in self.intents if i.kind == "transactional"]

    def queries(self) -> list[IntentSchema]:
        return [i for i in self.intents if i.kind == "query"]

    def producers(self, entity_name: str) -> list[IntentSchema]:
        return [i for i in self.intents if i.kind == "transactional" and i.entity_name == entity_name]


@dataclass(frozen=True)
class SlotValuePool:
    intent_name: str
    values_per_slot: dict = field(default_factory=dict)


# ------------------------------------------------------------ type checks


def conforms(spec: SlotSpec, value) -> bool:
    """Whether a DSL value is acceptable for the slot's declared type."""
    t = spec.value_type
    if t in STRING_TYPES:
        return isinstance(value, Text)
    if t == "enum_text":
        return isinstance(value, Text) and value.value.strip().lower() in {a.lower() for a in spec.allowed_values}
    if t == "integer":
        return isinstance(value, Integer)
    if t == "number":
        return isinstance(value, (Number, Integer))
    if t == "boolean":
        return isinstance(value, Boolean)
    return False


# ------------------------------------------------------------------ stage 1


def parse_schema_reply(reply: str, description: str = "") -> IntentSchema:
    """Parse the line-oriented stage-1 reply into a transactional schema."""
    fields: dict[str, str] = {}
    slots: list[SlotSpec] = []
    for lineno, raw in enumerate(reply.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        key, sep, rest = line.partition(":")
        key = key.strip().upper()
        rest = rest.strip()
        if not sep or key not in ("INTENT", "DOMAIN", "SLOT", "ENTITY", "CONFIRM"):
            raise ParseError(f"line {lineno}: unexpected content {line!r}")
        if key == "SLOT":
            parts = [p.strip() for p in rest.split("|")]
            if len(parts) not in (3, 4):
                raise ParseError(f"line {lineno}: SLOT needs name|type|mandatory")
            name, value_type, presence = parts[:3]
            if presence not in ("mandatory", "optional"):
                raise ParseError(f"line {lineno}: slot presence must be mandatory or optional")
            allowed = tuple(v.strip() for v in parts[3].split(";") if v.strip()) if len(parts) == 4 else None
            if any(s.name == name for s in slots):
                raise ParseError(f"line {lineno}: duplicate slot {name!r}")
            try:
                slots.append(SlotSpec(name, value_type, presence == "mandatory", allowed))
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
        else:
            if key in fields:
                raise ParseError(f"line {lineno}: repeated {key}")
            fields[key] = rest
    for key in ("INTENT", "DOMAIN", "ENTITY"):
        if key not in fields:
            raise ParseError(f"reply lacks {key}")
    confirm = fields.get("CONFIRM", "true").lower()
    if confirm not in ("true", "false"):
        raise ParseError("CONFIRM must be true or false")
    try:
        return IntentSchema(
            intent_name=fields["INTENT"],
            domain=fields["DOMAIN"],
            kind="transactional",
            slots=tuple(slots),
            entity_name=fields["ENTITY"],
            requires_confirmation=confirm == "true",
            description=description,
        )
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def format_schema_reply(schema: IntentSchema) -> str:
    lines = [f"INTENT: {schema.intent_name}", f"DOMAIN: {schema.domain}"]
    for s in schema.slots:
        line = f"SLOT: {s.name}|{s.value_type}|{'mandatory' if s.mandatory else 'optional'}"
        if s.allowed_values:
            line += "|" + ";".join(s.allowed_values)
        lines.append(line)
    lines += [f"ENTITY: {schema.entity_name}", f"CONFIRM: {'true' if schema.requires_confirmation else 'false'}"]
    return "\n".join(lines)


def generate_intent_schema(description: str, provider: LLMProvider, prompt_dir=None) -> IntentSchema:
    if not description or not description.strip():
        raise ValueError("intent description must be non-empty")
    prompt = prompts.render(1, {"description": description.strip()}, prompt_dir)
    return parse_schema_reply(provider.complete(prompt, DEFAULT_TEMPERATURE), description.strip())


# ------------------------------------------------------------------ stage 2


def schema_context(schema: IntentSchema) -> dict:
    return {
        "intent": schema.intent_name,
        "kind": schema.kind,
        "entity": schema.entity_name,
        "slots": [
            {"name": s.name, "type": s.value_type, "mandatory": s.mandatory, **({"allowed": list(s.allowed_values)} if s.allowed_values else {})}
            for s in schema.slots
        ],
    }


def parse_slot_lines(reply: str) -> dict:
    """Parse ``slot = <value>`` lines (any DSL value) into an ordered dict."""
    out = {}
    for lineno, raw in enumerate(reply.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        name, sep, rest = line.partition("=")
        name = name.strip()
        if not sep or not SNAKE_RE.fullmatch(name):
            raise ParseError(f"line {lineno}: expected <slot> = <value>, got {line!r}")
        if name in out:
            raise ParseError(f"line {lineno}: duplicate slot {name!r}")
        try:
            out[name] = parse_value(rest.strip())
        except CommandSyntaxError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
    return out


def generate_slot_value_pool(schema: IntentSchema, provider: LLMProvider, prompt_dir=None) -> SlotValuePool:
    prompt = prompts.render(2, schema_context(schema), prompt_dir)
    parsed = parse_slot_lines(provider.complete(prompt, DEFAULT_TEMPERATURE))
    values = {}
    for spec in schema.slots:
        raw = parsed.pop(spec.name, None)
        items = raw.items if isinstance(raw, ListOf) else ((raw,) if raw is not None else ())
        kept = list(dict.fromkeys(v for v in items if conforms(spec, v)))
        if not kept:
            raise TypeMismatch(f"no valid candidate values for slot {schema.intent_name}.{spec.name}")
        values[spec.name] = kept
    if parsed:
        raise ParseError(f"reply names unknown slots: {sorted(parsed)}")
    return SlotValuePool(schema.intent_name, values)


# ------------------------------------------------------------ query intents


def query_name(entity_name: str) -> str:
    return f"find_{entity_name}"


def derive_query_intent(transactional: IntentSchema) -> IntentSchema:
    if transactional.kind != "transactional":
        raise ValueError(f"{transactional.intent_name} is not transactional")
    return IntentSchema(
        intent_name=query_name(transactional.entity_name),
        domain=transactional.domain,
        kind="query",
        slots=tuple(replace(s, mandatory=False) for s in transactional.slots),
        entity_name=transactional.entity_name,
        requires_confirmation=False,
        description="Find " + transactional.entity_name.replace("_", " "),
    )


def merge_query_intents(intents: Iterable[IntentSchema], domains: tuple[str, ...] = ()) -> SchemaCatalog:
    """Collapse query intents returning the same entity into one (slot union)."""
    merged: dict[str, IntentSchema] = {}
    order: list[object] = []
    for intent in intents:
        if intent.kind != "query":
            order.append(intent)
            continue
        prev = merged.get(intent.entity_name)
        if prev is None:
            merged[intent.entity_name] = intent
            order.append(intent.entity_name)
        else:
            extra = tuple(s for s in intent.slots if not prev.has_slot(s.name))
            merged[intent.entity_name] = replace(prev, slots=prev.slots + extra)
    return SchemaCatalog(tuple(merged[x] if isinstance(x, str) else x for x in order), domains)


def build_catalog(transactional: Iterable[IntentSchema], denylist: Iterable[str] = ()) -> SchemaCatalog:
    """Transactional intents (minus the denylist), their queries, merged."""
    deny = set(denylist)
    kept = [t for t in transactional if t.intent_name not in deny]
    queries = [derive_query_intent(t) for t in kept]
    return merge_query_intents(kept + queries)


# -------------------------------------------------------------- persistence


def slot_to_dict(s: SlotSpec) -> dict:
    d = {"name": s.name, "value_type": s.value_type, "mandatory": s.mandatory}
    if s.allowed_values is not None:
        d["allowed_values"] = list(s.allowed_values)
    return d


def intent_to_dict(i: IntentSchema) -> dict:
    return {
        "intent_name": i.intent_name,
        "domain": i.domain,
        "kind": i.kind,
        "slots": [slot_to_dict(s) for s in i.slots],
        "entity_name": i.entity_name,
        "requires_confirmation": i.requires_confirmation,
        "description": i.description,
    }


def intent_from_dict(d: dict) -> IntentSchema:
    slots = tuple(
        SlotSpec(s["name"], s["value_type"], bool(s["mandatory"]), tuple(s["allowed_values"]) if s.get("allowed_values") is not None else None)
        for s in d["slots"]
    )
    return IntentSchema(d["intent_name"], d["domain"], d["kind"], slots, d["entity_name"], bool(d["requires_confirmation"]), d.get("description", ""))


def save_catalog(catalog: SchemaCatalog, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for intent in catalog.intents:
            fh.write(json.dumps(intent_to_dict(intent), ensure_ascii=False) + "\n")


def load_catalog(path) -> SchemaCatalog:
    intents = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            intents.append(intent_from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise SchemaError(str(exc), lineno) from None
    return SchemaCatalog(tuple(intents))


def save_pools(pools: Iterable[SlotValuePool], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pool in pools:
            record = {"intent_name": pool.intent_name, "values_per_slot": {k: [serialize_value(v) for v in vs] for k, vs in pool.values_per_slot.items()}}
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_pools(path) -> dict[str, SlotValuePool]:
    pools = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            values = {k: [parse_value(v) for v in vs] for k, vs in d["values_per_slot"].items()}
        except (json.JSONDecodeError, KeyError, CommandSyntaxError) as exc:
            raise SchemaError(str(exc), lineno) from None
        pools[d["intent_name"]] = SlotValuePool(d["intent_name"], values)
    return pools


def derive_query_pools(catalog: SchemaCatalog, pools: dict) -> dict:
    """Pools for query intents, pooled from the producing transactional intents."""
    out = dict(pools)
    for query in catalog.queries():
        if query.intent_name in out:
            continue
        values: dict = {}
        for producer in catalog.producers(query.entity_name):
            pool = pools.get(producer.intent_name)
            if pool is None:
                continue
            for slot, candidates in pool.values_per_slot.items():
                merged = values.setdefault(slot, [])
                merged.extend(v for v in candidates if v not in merged)
        out[query.intent_name] = SlotValuePool(query.intent_name, {s.name: values.get(s.name, []) for s in query.slots})
    return out
