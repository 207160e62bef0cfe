"""Acceptance criteria, one test each; a summary line per criterion is printed at the end of the run."""

from __future__ import annotations

import json
import random
import re
import string
import time

import metrics_oracle
from frozen import FIXTURE_STATS, ORACLE_METRICS
from test_backend import check_never_performed_missing, random_command
from todgen.cli import main
from todgen.config import RunConfig
from todgen.dataset import read_dataset
from todgen.dsl import (
    AttrAssign,
    AttrRef,
    Boolean,
    Confirm,
    Integer,
    IntentCall,
    ListOf,
    Number,
    Placeholder,
    Say,
    Text,
    VarRef,
    canonicalize,
    parse_command,
    serialize_command,
)
from todgen.errors import DanglingVarRef
from todgen.evaluation import evaluate, gold_predictions, read_predictions
from todgen.pipeline import generate_catalog, read_descriptions, run_pipeline
from todgen.planner import SamplingConfig, sample_conversation_shape
from todgen.providers import ScriptedProvider
from todgen.seeding import derive_seed
from todgen.simulator import Simulator
from todgen.validation import post_filters, replay_signals, salvage, self_consistency_check
from validation_cases import SALVAGE_CASES, STAGE13_HISTORY, STAGE13_MATRIX

RESULTS: list[str] = []


def report(number: int, name: str, ok: bool, detail: str) -> None:
    RESULTS.append(f"criterion {number} {'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, detail


# ---------------------------------------------------------------- 1


def test_criterion_1_stats_reproduction(fixtures_dir, capsys):
    start = time.perf_counter()
    code = main(["stats", str(fixtures_dir / "seed_dataset.jsonl"), "--catalog", str(fixtures_dir / "catalog.jsonl"), "--json"])
    elapsed = time.perf_counter() - start
    stats = json.loads(capsys.readouterr().out)
    wrong = [k for k, v in FIXTURE_STATS.items() if stats[k] != v]
    ok = code == 0 and not wrong and elapsed < 60
    report(1, "stats on the 50-conversation fixture", ok, f"mismatched={wrong} runtime={elapsed:.2f}s (limit 60s)")


# ---------------------------------------------------------------- 2


def test_criterion_2_catalog_figures():
    catalog = generate_catalog(read_descriptions(), ScriptedProvider(fallback=Simulator()), ["watch_tv_channel"])
    got = (len(catalog.transactional()), len(catalog.queries()), len(catalog), len(catalog.domains))
    report(2, "catalog figures", got == (53, 47, 100, 13), f"transactional/query/total/domains = {got}, want (53, 47, 100, 13)")


# ---------------------------------------------------------------- 3

_IDENT_CHARS = string.ascii_lowercase + string.digits + "_"
_TEXT_CHARS = string.printable + "éü中 \U0001f600"


def _ident(rng):
    while True:
        name = rng.choice(string.ascii_lowercase) + "".join(rng.choice(_IDENT_CHARS) for _ in range(rng.randrange(8)))
        if not re.fullmatch(r"x\d+", name):  # variable names are not identifiers
            return name


def _var(rng):
    return f"x{rng.randrange(8)}"


def _value(rng, depth=0):
    k = rng.randrange(9 if depth < 2 else 8)
    if k == 0:
        return Text("".join(rng.choice(_TEXT_CHARS) for _ in range(rng.randrange(12))))
    if k == 1:
        return Integer(rng.randint(-(10**15), 10**15))
    if k == 2:
        return Number(rng.choice([rng.uniform(-1e6, 1e6), rng.random() * 10 ** rng.randint(-300, 300), -0.0, 0.1]))
    if k == 3:
        return Boolean(rng.random() < 0.5)
    if k == 4:
        return VarRef(_var(rng))
    if k == 5:
        return AttrRef(_var(rng), _ident(rng))
    if k in (6, 7):
        return Placeholder()
    return ListOf(tuple(_value(rng, depth + 1) for _ in range(rng.randrange(4))))


def _args(rng):
    names = list(dict.fromkeys(_ident(rng) for _ in range(rng.randrange(5))))
    return tuple((n, _value(rng)) for n in names)


def random_dsl_command(rng: random.Random):
    k = rng.randrange(4)
    if k == 0:
        return IntentCall(_var(rng), _ident(rng), _args(rng))
    if k == 1:
        return AttrAssign(_var(rng), _ident(rng), _value(rng))
    if k == 2:
        return Say(_args(rng))
    return Confirm(_var(rng))


def test_criterion_3_dsl_properties():
    rng = random.Random(3)
    start = time.perf_counter()
    failures = idempotence_failures = 0
    checked = 0
    for _ in range(10_000):
        cmd = random_dsl_command(rng)
        if parse_command(serialize_command(cmd)) != cmd:
            failures += 1
        known = [f"x{i}" for i in range(8)] if rng.random() < 0.5 else []
        try:
            once = canonicalize([cmd], known=known)
        except DanglingVarRef:
            continue
        checked += 1
        idempotence_failures += canonicalize(once, known=known) != once
    elapsed = time.perf_counter() - start
    ok = failures == 0 and idempotence_failures == 0 and elapsed < 10
    detail = f"round-trip failures={failures}/10000 idempotence failures={idempotence_failures}/{checked} runtime={elapsed:.2f}s (limit 10s)"
    report(3, "DSL round-trip and canonicalize", ok, detail)


# ---------------------------------------------------------------- 4


def test_criterion_4_backend(fixtures_dir, seed_catalog):
    rng = random.Random(4)
    violations = 0
    for _ in range(1000):
        try:
            check_never_performed_missing([random_command(rng) for _ in range(rng.randint(1, 25))])
        except AssertionError:
            violations += 1
    records = read_dataset(fixtures_dir / "seed_dataset.jsonl")
    replay_failures = [r.id for r in records if not replay_signals(r, seed_catalog).passed]
    ok = violations == 0 and not replay_failures
    report(4, "back-end state machine", ok, f"violations={violations}/1000 replay failures={len(replay_failures)}/{len(records)}")


# ---------------------------------------------------------------- 5


def test_criterion_5_validation(fixtures_dir, small_catalog):
    from todgen.agents import parse_labels

    history = list(STAGE13_HISTORY)
    matrix_wrong = []
    for name, original, replies, should_pass in STAGE13_MATRIX:
        labels = parse_labels(original, history, small_catalog)
        verdict = self_consistency_check(history, ScriptedProvider(replies), 3, catalog=small_catalog, original=labels)
        if verdict.passed is not should_pass:
            matrix_wrong.append(name)
    salvage_wrong = [name for name, aborted, _, _, kept in SALVAGE_CASES if (salvage(aborted, ScriptedProvider(["Bye."])) is not None) is not kept]
    defects = {r.id: r for r in read_dataset(fixtures_dir / "defects.jsonl")}
    filters_wrong = [] if post_filters(defects.pop("clean")).passed else ["clean"]
    filters_wrong += [name for name, r in defects.items() if post_filters(r).checks != [name]]
    ok = not (matrix_wrong or salvage_wrong or filters_wrong) and len(STAGE13_MATRIX) == 12
    detail = (
        f"stage-13 matrix {12 - len(matrix_wrong)}/12, salvage {len(SALVAGE_CASES) - len(salvage_wrong)}/{len(SALVAGE_CASES)}, "
        f"post filters {5 - len(filters_wrong)}/5; wrong={matrix_wrong + salvage_wrong + filters_wrong}"
    )
    report(5, "validation behaviour", ok, detail)


# ---------------------------------------------------------------- 6


def test_criterion_6_metrics_oracle(fixtures_dir):
    gold = read_dataset(fixtures_dir / "eval_gold.jsonl")
    preds = read_predictions(fixtures_dir / "eval_pred.jsonl")
    got = evaluate(gold, preds).as_dict()
    oracle = metrics_oracle.score(
        metrics_oracle.load_gold(fixtures_dir / "eval_gold.jsonl"), metrics_oracle.load_predictions(fixtures_dir / "eval_pred.jsonl")
    )
    off = {k: round(got[k] - oracle[k], 4) for k in ORACLE_METRICS if abs(got[k] - oracle[k]) > 0.01 or abs(got[k] - ORACLE_METRICS[k]) > 0.01}
    not_perfect = []
    for name in ("eval_gold.jsonl", "seed_dataset.jsonl", "defects.jsonl"):
        records = read_dataset(fixtures_dir / name)
        scores = evaluate(records, gold_predictions(records)).as_dict()
        if any(scores[k] != 100.0 for k in ORACLE_METRICS):
            not_perfect.append(name)
    rng = random.Random(6)
    order_violations = 0
    for _ in range(50):
        rate = rng.random()
        noisy = {k: ([] if rng.random() < rate else v) for k, v in gold_predictions(gold).items()}
        r = evaluate(gold, noisy)
        order_violations += r.exact_match_conversation > r.exact_match_turn
    ok = not off and not not_perfect and order_violations == 0
    detail = f"off-by>0.01={off} gold-vs-gold below 100={not_perfect} conv>turn cases={order_violations}/50"
    report(6, "metrics oracle equivalence", ok, detail)


# ---------------------------------------------------------------- 7


def test_criterion_7_end_to_end(tmp_path):
    start = time.perf_counter()
    first = run_pipeline(RunConfig(seed=7, n=100, out=str(tmp_path / "a"), jobs=4))
    elapsed = time.perf_counter() - start
    run_pipeline(RunConfig(seed=7, n=100, out=str(tmp_path / "b"), jobs=1))
    differing = [f for f in first["files"] + ["manifest.json"] if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
    ok = not differing and elapsed < 120 and first["generated"] == 100
    detail = f"differing files={differing} 100-conversation runtime={elapsed:.1f}s (limit 120s) validated={first['validated']}"
    report(7, "end-to-end determinism", ok, detail)


# ---------------------------------------------------------------- 8


def test_criterion_8_phenomenon_rate(seed_catalog):
    config = SamplingConfig()
    n = 10_000
    unhappy = sum(1 for k in range(n) if sample_conversation_shape(seed_catalog, derive_seed(derive_seed(0, "conversation", k), "shape"), config).phenomena)
    rate = 100.0 * unhappy / n
    report(8, "phenomenon rate", abs(rate - 25.2) <= 2.0, f"{unhappy}/{n} shapes = {rate:.2f}% (target 25.2 +/- 2)")
