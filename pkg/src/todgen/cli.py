"""Command-line front end.

Exit codes: 0 ok, 1 validation failures present, 2 fatal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import load_config
from .dataset import compute_stats, read_dataset
from .errors import TodgenError
from .evaluation import evaluate, read_predictions
from .planner import build_plan, choose_primary, compile_conversation_rules, plan_to_dict
from .schema import derive_query_pools, load_catalog, load_pools, save_catalog, save_pools
from .seeding import derive_seed

EXIT_OK, EXIT_FAILURES, EXIT_FATAL = 0, 1, 2


def _run_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--seed", type=int, help="root seed")
    p.add_argument("--n", type=int, help="number of conversations")
    p.add_argument("--provider", choices=("scripted", "remote"))
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", type=int, help="concurrent conversation jobs")
    return p


def _config(args):
    return load_config(args.config, seed=args.seed, n=args.n, provider=args.provider, out=args.out, jobs=args.jobs)


def cmd_gen_intents(args) -> int:
    from .pipeline import generate_catalog, generate_pools, make_provider, read_descriptions

    config = _config(args)
    provider = make_provider(config)
    catalog = generate_catalog(read_descriptions(args.descriptions or config.descriptions), provider, config.denylist, config.limits.retries, config.prompt_dir)
    pools = generate_pools(catalog, provider, config.limits.retries, config.prompt_dir)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    save_catalog(catalog, out / "catalog.jsonl")
    save_pools([pools[k] for k in sorted(pools)], out / "pools.jsonl")
    print(f"{len(catalog.transactional())} transactional + {len(catalog.queries())} query = {len(catalog)} intents across {len(catalog.domains)} domains")
    return EXIT_OK


def cmd_plan(args) -> int:
    from .pipeline import make_provider

    config = _config(args)
    catalog = load_catalog(args.catalog)
    pools = derive_query_pools(catalog, load_pools(args.pools))
    provider = make_provider(config)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    failures = 0
    with (out / "plans.jsonl").open("w", encoding="utf-8") as fh:
        for k in range(config.n):
            seed = derive_seed(config.seed, "conversation", k)
            primary = choose_primary(catalog, config.seed, k)
            try:
                plan = build_plan(primary, catalog, pools, provider, config.sampling, seed, config.limits.retries, config.prompt_dir)
            except (TodgenError, ValueError) as exc:
                failures += 1
                logging.warning("plan %d failed: %s", k, exc)
                continue
            row = plan_to_dict(plan, compile_conversation_rules(plan)) | {"id": f"conv-{k:05d}"}
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
    print(f"wrote {config.n - failures} plans to {out / 'plans.jsonl'}")
    return EXIT_FAILURES if failures else EXIT_OK


def cmd_generate(args) -> int:
    from .pipeline import run_pipeline

    manifest = run_pipeline(_config(args))
    print(json.dumps({k: manifest[k] for k in ("generated", "validated", "salvaged", "discarded")}, sort_keys=True))
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validation import validate_record

    catalog = load_catalog(args.catalog)
    failed = 0
    for record in read_dataset(args.dataset):
        verdict = validate_record(record, catalog)
        reasons = [{"check": r.check, "detail": r.detail, "turn_index": r.turn_index} for r in verdict.reasons]
        print(json.dumps({"conversation_id": record.id, "passed": verdict.passed, "reasons": reasons}))
        failed += not verdict.passed
    return EXIT_FAILURES if failed else EXIT_OK


def cmd_stats(args) -> int:
    catalog = load_catalog(args.catalog) if args.catalog else None
    stats = compute_stats(read_dataset(args.dataset), catalog)
    print(json.dumps(stats.as_dict(), indent=2, sort_keys=True) if args.json else stats.table())
    return EXIT_OK


def cmd_eval(args) -> int:
    report = evaluate(read_dataset(args.gold), read_predictions(args.predictions))
    print(json.dumps(report.as_dict(), indent=2, sort_keys=True) if args.json else report.table())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="todgen", description="Synthetic task-oriented dialogue generation and scoring.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    run = _run_options()

    p = sub.add_parser("gen-intents", parents=[run], help="stages 1-2: intent catalog and slot value pools")
    p.add_argument("--descriptions", help="file with one intent description per line")
    p.set_defaults(func=cmd_gen_intents)

    p = sub.add_parser("plan", parents=[run], help="stages 3-8: conversation plans")
    p.add_argument("--catalog", required=True)
    p.add_argument("--pools", required=True)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("generate", parents=[run], help="full pipeline run")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("validate", help="re-run the offline checks over a dataset")
    p.add_argument("dataset")
    p.add_argument("--catalog", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("stats", help="dataset statistics")
    p.add_argument("dataset")
    p.add_argument("--catalog")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("eval", help="score predictions against gold conversations")
    p.add_argument("gold")
    p.add_argument("predictions", help="prediction JSONL, or a dataset file")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (TodgenError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
