"""Mock back-end: one schema-driven session per intent variable.

System commands are applied in order; each non-``say`` command yields exactly
one signal.  The entity store answers query intents and records the entities
created by performed transactional intents.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

from .dsl import (
    AttrAssign,
    AttrRef,
    Command,
    Confirm,
    ConfirmationRequired,
    Entity,
    IntentCall,
    ListOf,
    MissingSlots,
    Performed,
    Placeholder,
    QueryResult,
    Say,
    SignalPayload,
    Text,
    VarRef,
)
from .errors import InvalidTransition, TypeMismatch, UnknownIntent, UnknownVariable
from .schema import IntentSchema, SchemaCatalog, conforms

COLLECTING = "collecting"
AWAITING_CONFIRMATION = "awaiting_confirmation"
PERFORMED = "performed"
CANCELLED = "cancelled"


@dataclass
class IntentSession:
    var: str
    schema_ref: str
    provided: dict = field(default_factory=dict)
    state: str = COLLECTING


@dataclass(frozen=True)
class GoalEntry:
    intent: str
    slots: dict
    cancelled: bool = False


class EntityStore:
    """Entities per entity name; ids are ``<entity_name>-<n>``."""

    def __init__(self, entities: dict | None = None):
        self.entities: dict[str, list[Entity]] = {k: list(v) for k, v in (entities or {}).items()}
        for name, records in self.entities.items():
            ids = [e.id for e in records]
            if len(set(ids)) != len(ids):
                raise ValueError(f"duplicate entity ids for {name}")

    def next_id(self, entity_name: str) -> str:
        taken = {e.id for e in self.entities.get(entity_name, [])}
        n = len(self.entities.get(entity_name, [])) + 1
        while f"{entity_name}-{n}" in taken:
            n += 1
        return f"{entity_name}-{n}"

    def add(self, entity_name: str, fields) -> Entity:
        entity = Entity(self.next_id(entity_name), tuple(fields))
        self.entities.setdefault(entity_name, []).append(entity)
        return entity

    def copy(self) -> "EntityStore":
        return EntityStore(copy.deepcopy(self.entities))

    def __eq__(self, other):
        return isinstance(other, EntityStore) and self.entities == other.entities


def _norm_text(s: str) -> str:
    return " ".join(s.strip().lower().split())


def _field_matches(stored, wanted) -> bool:
    if isinstance(stored, Text) and isinstance(wanted, Text):
        return _norm_text(stored.value) == _norm_text(wanted.value)
    return stored == wanted


def query_filter(store: EntityStore, intent: IntentSchema, args) -> list[Entity]:
    """Entities of the intent's entity type whose fields equal every argument."""
    if intent.kind != "query":
        raise ValueError(f"{intent.intent_name} is not a query intent")
    for slot, value in args:
        if not conforms(intent.slot(slot), value):
            raise TypeMismatch(f"{intent.intent_name}.{slot} does not accept {value!r}")
    return [
        e
        for e in store.entities.get(intent.entity_name, [])
        if all(e.get(slot) is not None and _field_matches(e.get(slot), value) for slot, value in args)
    ]


class BackendSession:
    """All intent sessions of one conversation."""

    def __init__(self, catalog: SchemaCatalog, store: EntityStore | None = None):
        self.catalog = catalog
        self.store = store.copy() if store is not None else EntityStore()
        self.sessions: dict[str, IntentSession] = {}

    # -- helpers

    def _resolve(self, value):
        if isinstance(value, AttrRef):
            session = self._session(value.var)
            if value.slot not in session.provided:
                raise TypeMismatch(f"{value.var}.{value.slot} has no value yet")
            return session.provided[value.slot]
        if isinstance(value, VarRef):
            self._session(value.var)
            return value
        if isinstance(value, (ListOf, Placeholder)):
            raise TypeMismatch(f"unsupported slot value {value!r}")
        return value

    def _session(self, var: str) -> IntentSession:
        try:
            return self.sessions[var]
        except KeyError:
            raise UnknownVariable(var) from None

    def _checked(self, schema: IntentSchema, slot: str, value):
        spec = schema.slot(slot)
        value = self._resolve(value)
        if isinstance(value, VarRef):
            return value
        if not conforms(spec, value):
            raise TypeMismatch(f"{schema.intent_name}.{slot} ({spec.value_type}) does not accept {value!r}")
        return value

    def _evaluate(self, session: IntentSession, schema: IntentSchema) -> SignalPayload:
        if schema.kind == "query":
            session.state = PERFORMED
            return QueryResult(session.var, tuple(query_filter(self.store, schema, list(session.provided.items()))))
        missing = [s for s in schema.mandatory_slots if s not in session.provided]
        if missing:
            return MissingSlots(session.var, tuple(missing))
        if schema.requires_confirmation:
            session.state = AWAITING_CONFIRMATION
            return ConfirmationRequired(session.var)
        return self._perform(session, schema)

    def _perform(self, session: IntentSession, schema: IntentSchema) -> Performed:
        session.state = PERFORMED
        fields = [(k, v) for k, v in session.provided.items() if not isinstance(v, VarRef)]
        entity = self.store.add(schema.entity_name, fields)
        return Performed(session.var, entity.id)

    # -- public API

    def apply_command(self, cmd: Command) -> SignalPayload | None:
        """Apply one system command; ``None`` means no signal (a ``say``)."""
        if isinstance(cmd, Say):
            return None
        if isinstance(cmd, IntentCall):
            if cmd.intent not in self.catalog:
                raise UnknownIntent(cmd.intent)
            if cmd.var in self.sessions:
                raise InvalidTransition(f"{cmd.var} is already bound to {self.sessions[cmd.var].schema_ref}")
            schema = self.catalog[cmd.intent]
            provided = {slot: self._checked(schema, slot, value) for slot, value in cmd.args}
            session = IntentSession(cmd.var, cmd.intent, provided)
            self.sessions[cmd.var] = session
            return self._evaluate(session, schema)
        if isinstance(cmd, AttrAssign):
            session = self._session(cmd.var)
            schema = self.catalog[session.schema_ref]
            if session.state == CANCELLED or (session.state == PERFORMED and schema.kind != "query"):
                raise InvalidTransition(f"cannot change {cmd.var} in state {session.state}")
            session.provided[cmd.slot] = self._checked(schema, cmd.slot, cmd.value)
            return self._evaluate(session, schema)
        if isinstance(cmd, Confirm):
            session = self._session(cmd.var)
            if session.state != AWAITING_CONFIRMATION:
                raise InvalidTransition(f"cannot confirm {cmd.var} in state {session.state}")
            return self._perform(session, self.catalog[session.schema_ref])
        raise TypeError(f"not a command: {cmd!r}")

    def cancel(self, var: str) -> None:
        session = self._session(var)
        if session.state == PERFORMED:
            raise InvalidTransition(f"{var} was already performed")
        session.state = CANCELLED

    def finalize(self, cancel_intents=()) -> None:
        """End of conversation: unperformed sessions of the given intents are cancelled."""
        cancel_intents = set(cancel_intents)
        for session in self.sessions.values():
            if session.state in (COLLECTING, AWAITING_CONFIRMATION) and session.schema_ref in cancel_intents:
                session.state = CANCELLED

    def goal_state(self) -> dict[str, GoalEntry]:
        return {
            var: GoalEntry(s.schema_ref, dict(s.provided), s.state == CANCELLED)
            for var, s in self.sessions.items()
        }

    def performed_vars(self) -> list[str]:
        return [v for v, s in self.sessions.items() if s.state == PERFORMED]


def apply_command(session: BackendSession, cmd: Command) -> SignalPayload | None:
    return session.apply_command(cmd)


def goal_state(session: BackendSession) -> dict[str, GoalEntry]:
    return session.goal_state()
