"""Brute-force reference scorer used to freeze the expected metric values.

Written separately from the package scorer: every point rebuilds the goal
state from the start of the conversation, and string similarity uses its own
edit-distance routine.  Only the command parser and canonicalize are shared.
"""

from __future__ import annotations

import json
import re
from functools import lru_cache

from todgen.dsl import AttrAssign, IntentCall, Text, canonicalize, parse_command
from todgen.errors import DanglingVarRef


def _norm(s: str) -> str:
    s = re.sub(r"\s+", " ", s.lower()).strip()
    for article in ("the ", "a ", "an "):
        if s.startswith(article):
            s = s[len(article):]
            break
    return s.rstrip(".!?,;:").strip()


def _edit(a: str, b: str) -> int:
    @lru_cache(maxsize=None)
    def d(i: int, j: int) -> int:
        if i == 0 or j == 0:
            return i + j
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def _same_value(g, p) -> bool:
    if isinstance(g, Text) and isinstance(p, Text):
        a, b = _norm(g.value), _norm(p.value)
        if a == b:
            return True
        longest = max(len(a), len(b))
        return longest > 0 and 1 - _edit(a, b) / longest >= 0.85
    return g == p


def _same_slots(g: dict, p: dict) -> bool:
    return set(g) == set(p) and all(_same_value(g[k], p[k]) for k in g)


def _state(command_lists) -> dict:
    state = {}
    for cmds in command_lists:
        for c in cmds:
            if isinstance(c, IntentCall):
                state[c.var] = [c.intent, dict(c.args)]
            elif isinstance(c, AttrAssign) and c.var in state:
                state[c.var][1][c.slot] = c.value
    return state


def _same_state(g: dict, p: dict) -> bool:
    return set(g) == set(p) and all(g[v][0] == p[v][0] and _same_slots(g[v][1], p[v][1]) for v in g)


def _point_assignments(cmds) -> dict:
    out = {}
    for c in cmds:
        if isinstance(c, IntentCall):
            for slot, value in c.args:
                out[(c.var, slot)] = value
        elif isinstance(c, AttrAssign):
            out[(c.var, c.slot)] = c.value
    return out


def load_gold(path) -> list[dict]:
    """Conversations as plain dicts with parsed system commands."""
    out = []
    for line in open(path, encoding="utf-8"):
        d = json.loads(line)
        points, kinds, group = [], [], -1
        for t in d["turns"]:
            if t["kind"] == "user":
                group += 1
                kinds.append(t.get("phenomenon") or "none")
            elif t["kind"] == "system":
                points.append((group, [parse_command(c) for c in t["commands"]]))
        out.append({"id": d["id"], "points": points, "kinds": kinds})
    return out


def load_predictions(path) -> dict:
    out = {}
    for line in open(path, encoding="utf-8"):
        d = json.loads(line)
        out[(d["conversation_id"], d["point_index"])] = [parse_command(c) for c in d["commands"]]
    return out


def score(gold: list[dict], preds: dict) -> dict:
    intent_hits = intent_total = 0
    jga_hits = slot_hits = evaluated = 0
    groups_ok = groups_total = conv_ok = 0
    kind_ok: dict = {}
    kind_total: dict = {}
    for conv in gold:
        points = conv["points"]
        ok_by_group: dict = {}
        for k, (group, g_cmds) in enumerate(points):
            known = []
            for _, earlier in points[:k]:
                for c in earlier:
                    if isinstance(c, IntentCall) and c.var not in known:
                        known.append(c.var)
            try:
                p_cmds = canonicalize(preds[(conv["id"], k)], known)
            except DanglingVarRef:
                p_cmds = None
            pred = p_cmds or []
            for c in g_cmds:
                if isinstance(c, IntentCall):
                    intent_total += 1
                    intent_hits += any(isinstance(x, IntentCall) and x.intent == c.intent for x in pred)
            if _point_assignments(g_cmds) or _point_assignments(pred):
                evaluated += 1
                history = [cmds for _, cmds in points[:k]]
                jga_hits += _same_state(_state(history + [g_cmds]), _state(history + [pred]))
                slot_hits += _same_slots(_point_assignments(g_cmds), _point_assignments(pred))
            exact = p_cmds is not None and canonicalize(g_cmds, known) == p_cmds
            ok_by_group[group] = ok_by_group.get(group, True) and exact
        for group, ok in ok_by_group.items():
            groups_total += 1
            groups_ok += ok
            kind = conv["kinds"][group]
            kind_total[kind] = kind_total.get(kind, 0) + 1
            kind_ok[kind] = kind_ok.get(kind, 0) + ok
        conv_ok += all(ok_by_group.values())

    def pct(a, b):
        return 100.0 * a / b if b else 100.0

    return {
        "intent_accuracy": pct(intent_hits, intent_total),
        "joint_goal_accuracy": pct(jga_hits, evaluated),
        "slot_accuracy": pct(slot_hits, evaluated),
        "exact_match_turn": pct(groups_ok, groups_total),
        "exact_match_conversation": pct(conv_ok, len(gold)),
        "per_phenomenon": {k: pct(kind_ok[k], kind_total[k]) for k in sorted(kind_total)},
    }
