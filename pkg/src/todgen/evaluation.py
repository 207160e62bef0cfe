"""Scoring predicted system commands against gold conversations."""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import ConversationRecord, record_from_dict
from .dsl import (
    AttrAssign,
    IntentCall,
    Text,
    canonicalize,
    command_values,
    parse_command,
    serialize_command,
)
from .errors import AlignmentError, DanglingVarRef, ParseError
from .schema import IntentSchema, SchemaCatalog

FUZZY_THRESHOLD = 0.85
RETRIEVAL_MODES = ("none", "retrieval", "oracle")
_ARTICLE_RE = re.compile(r"^(?:the|a|an)\s+")
_TRAILING_PUNCT_RE = re.compile(r"[.!?,;:]+$")


# -------------------------------------------------------------- fuzzy match


def normalize_text(s: str) -> str:
    s = " ".join(s.lower().split())
    s = _ARTICLE_RE.sub("", s)
    return _TRAILING_PUNCT_RE.sub("", s).strip()


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def similarity(a: str, b: str) -> float:
    a, b = normalize_text(a), normalize_text(b)
    if not a and not b:
        return 1.0
    return 1.0 - levenshtein(a, b) / max(len(a), len(b))


def fuzzy_match(a: str, b: str, threshold: float = FUZZY_THRESHOLD) -> bool:
    na, nb = normalize_text(a), normalize_text(b)
    return na == nb or similarity(a, b) >= threshold


def values_match(gold, pred, threshold: float = FUZZY_THRESHOLD) -> bool:
    if isinstance(gold, Text) and isinstance(pred, Text):
        return fuzzy_match(gold.value, pred.value, threshold)
    return gold == pred


# --------------------------------------------------------------- predictions


def read_predictions(path) -> dict:
    """``{(conversation_id, point_index): [Command]}`` from a JSONL file.

    A dataset file is accepted too; its own system turns become the predictions.
    """
    out: dict = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            d = json.loads(line)
            if "turns" in d:
                out.update(gold_predictions([record_from_dict(d)]))
                continue
            try:
                cmds = [parse_command(c) for c in d["commands"]]
            except ParseError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
            key = (str(d["conversation_id"]), int(d["point_index"]))
            if key in out:
                raise AlignmentError(f"duplicate prediction for {key}")
            out[key] = cmds
    return out


def write_predictions(predictions: dict, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for (cid, idx), cmds in sorted(predictions.items()):
            row = {"conversation_id": cid, "point_index": idx, "commands": [serialize_command(c) for c in cmds]}
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def system_points(record: ConversationRecord) -> list[tuple[int, int, list]]:
    """(turn index, group index, commands) per system turn; a group spans one user turn."""
    points = []
    group = -1
    for i, t in enumerate(record.turns):
        if t.kind == "user":
            group += 1
        elif t.kind == "system":
            points.append((i, group, list(t.commands)))
    return points


def gold_predictions(records) -> dict:
    return {(r.id, k): cmds for r in records for k, (_, _, cmds) in enumerate(system_points(r))}


# ------------------------------------------------------------------ metrics


class GoalTracker:
    """Cumulative goal state; unknown variables and state errors are ignored."""

    def __init__(self, state: dict | None = None):
        self.state: dict[str, tuple[str, dict]] = {k: (v[0], dict(v[1])) for k, v in (state or {}).items()}

    def copy(self) -> "GoalTracker":
        return GoalTracker(self.state)

    def apply(self, cmds) -> "GoalTracker":
        for c in cmds:
            if isinstance(c, IntentCall):
                self.state[c.var] = (c.intent, dict(c.args))
            elif isinstance(c, AttrAssign) and c.var in self.state:
                self.state[c.var][1][c.slot] = c.value
        return self


def _slots_match(gold: dict, pred: dict, threshold: float) -> bool:
    return gold.keys() == pred.keys() and all(values_match(gold[k], pred[k], threshold) for k in gold)


def states_match(gold: GoalTracker, pred: GoalTracker, threshold: float = FUZZY_THRESHOLD) -> bool:
    if gold.state.keys() != pred.state.keys():
        return False
    return all(
        gold.state[v][0] == pred.state[v][0] and _slots_match(gold.state[v][1], pred.state[v][1], threshold) for v in gold.state
    )


def _assigned(cmds) -> dict:
    out = {}
    for c in cmds:
        if isinstance(c, (IntentCall, AttrAssign)):
            for slot, value in command_values(c):
                out[(c.var, slot)] = value
    return out


@dataclass
class MetricsReport:
    intent_accuracy: float = 100.0
    joint_goal_accuracy: float = 100.0
    slot_accuracy: float = 100.0
    exact_match_turn: float = 100.0
    exact_match_conversation: float = 100.0
    per_phenomenon: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "intent_accuracy": self.intent_accuracy,
            "joint_goal_accuracy": self.joint_goal_accuracy,
            "slot_accuracy": self.slot_accuracy,
            "exact_match_turn": self.exact_match_turn,
            "exact_match_conversation": self.exact_match_conversation,
            "per_phenomenon": dict(self.per_phenomenon),
            "counts": dict(self.counts),
        }

    def table(self) -> str:
        rows = [
            ("Intent acc.", self.intent_accuracy),
            ("JGA", self.joint_goal_accuracy),
            ("Slot acc.", self.slot_accuracy),
            ("Match (turn)", self.exact_match_turn),
            ("Match (conv.)", self.exact_match_conversation),
        ]
        lines = [f"{name:<24}{value:7.2f}" for name, value in rows]
        for kind, value in sorted(self.per_phenomenon.items()):
            lines.append(f"  match (turn) {kind:<24}{value:7.2f}")
        return "\n".join(lines)


def _pct(hits: int, total: int) -> float:
    return 100.0 * hits / total if total else 100.0


def evaluate(gold_records, predictions: dict, threshold: float = FUZZY_THRESHOLD) -> MetricsReport:
    """Score predictions point by point with the gold history as context.

    Each prediction is applied on top of the gold goal state before its point,
    so an early mistake is not counted again at later points.
    """
    gold_records = list(gold_records)
    expected = {(r.id, k) for r in gold_records for k in range(len(system_points(r)))}
    if set(predictions) != expected:
        missing = sorted(expected - set(predictions))[:3]
        extra = sorted(set(predictions) - expected)[:3]
        raise AlignmentError(f"predictions misaligned (missing {missing}, unexpected {extra})")
    n = Counter()
    per_kind_hits: dict = {}
    per_kind_total: dict = {}
    for r in gold_records:
        tracker = GoalTracker()
        known: list[str] = []
        group_ok: dict[int, bool] = {}
        group_kind: dict[int, str] = {}
        g = -1
        for t in r.turns:
            if t.kind == "user":
                g += 1
                group_kind[g] = t.phenomenon or "none"
        for k, (_, group, gold) in enumerate(system_points(r)):
            try:
                pred = canonicalize(predictions[(r.id, k)], known)
            except DanglingVarRef:
                pred = None
            pred_cmds = pred or []
            for c in gold:
                if isinstance(c, IntentCall):
                    n["intent_total"] += 1
                    n["intent_hits"] += any(isinstance(p, IntentCall) and p.intent == c.intent for p in pred_cmds)
            before = tracker.copy()
            tracker.apply(gold)
            gold_set, pred_set = _assigned(gold), _assigned(pred_cmds)
            if gold_set or pred_set:
                n["points"] += 1
                n["jga_hits"] += states_match(tracker, before.apply(pred_cmds), threshold)
                n["slot_hits"] += _slots_match(gold_set, pred_set, threshold)
            same = pred is not None and len(pred) == len(gold) and all(a == b for a, b in zip(canonicalize(gold, known), pred))
            group_ok[group] = group_ok.get(group, True) and same
            known.extend(c.var for c in gold if isinstance(c, IntentCall) and c.var not in known)
        for group, ok in group_ok.items():
            n["turn_total"] += 1
            n["turn_hits"] += ok
            kind = group_kind.get(group, "none")
            per_kind_total[kind] = per_kind_total.get(kind, 0) + 1
            per_kind_hits[kind] = per_kind_hits.get(kind, 0) + ok
        n["conv_total"] += 1
        n["conv_hits"] += all(group_ok.values())
    return MetricsReport(
        intent_accuracy=_pct(n["intent_hits"], n["intent_total"]),
        joint_goal_accuracy=_pct(n["jga_hits"], n["points"]),
        slot_accuracy=_pct(n["slot_hits"], n["points"]),
        exact_match_turn=_pct(n["turn_hits"], n["turn_total"]),
        exact_match_conversation=_pct(n["conv_hits"], n["conv_total"]),
        per_phenomenon={k: _pct(per_kind_hits[k], per_kind_total[k]) for k in sorted(per_kind_total)},
        counts=dict(n),
    )


# ----------------------------------------------------------- tool retrieval


class HashingEmbedder:
    """Bag of hashed word tokens, L2-normalised; deterministic across runs."""

    def __init__(self, dim: int = 256):
        self.dim = dim

    def __call__(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for token in re.findall(r"[a-z0-9]+", text.lower()):
            h = int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "big")
            vec[h % self.dim] += 1.0 if (h >> 32) & 1 else -1.0
        norm = np.linalg.norm(vec)
        return vec / norm if norm else vec


def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.divide(v, norm, out=np.zeros_like(v), where=norm > 0)


def _history_intents(history) -> list[str]:
    out = []
    for item in history or ():
        cmds = item.commands if hasattr(item, "commands") else [item]
        for c in cmds:
            if isinstance(c, IntentCall) and c.intent not in out:
                out.append(c.intent)
    return out


def retrieve_tools(
    user_utterance: str,
    catalog: SchemaCatalog,
    history=(),
    embedder=None,
    mode: str = "retrieval",
    gold_intents=None,
) -> list[IntentSchema]:
    """Tools offered to the labeller.

    ``retrieval`` returns the tool whose name is closest to the utterance plus
    every tool already used in the (oracle) history; ``oracle`` returns the
    conversation's gold tools.
    """
    if mode not in RETRIEVAL_MODES:
        raise ValueError(f"mode must be one of {RETRIEVAL_MODES}")
    if mode == "none":
        return []
    if mode == "oracle":
        names = list(gold_intents) if gold_intents is not None else _history_intents(history)
        return [catalog[n] for n in names]
    embedder = embedder or HashingEmbedder()
    names = [t.intent_name for t in catalog]
    scores = _unit(np.array([embedder(name.replace("_", " ")) for name in names], dtype=float)) @ _unit(
        np.asarray(embedder(user_utterance), dtype=float)
    )
    best = names[int(np.argmax(scores))]
    picked = [best] + [n for n in _history_intents(history) if n != best]
    return [catalog[n] for n in picked]

