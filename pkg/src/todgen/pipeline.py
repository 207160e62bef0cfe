"""End-to-end generation: catalog, plans, conversations, validation, outputs."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .agents import provider_for, run_conversation
from .config import RunConfig
from .dataset import ConversationRecord, assign_splits, compute_stats, write_dataset
from .errors import AbortedConversation, ConfigError, ParseError, ProviderError, TodgenError, TypeMismatch
from .planner import build_plan, choose_primary, compile_conversation_rules, plan_to_dict
from .providers import RemoteProvider, ScriptedProvider, with_retries
from .schema import (
    SchemaCatalog,
    build_catalog,
    derive_query_pools,
    generate_intent_schema,
    generate_slot_value_pool,
    load_catalog,
    load_pools,
    save_catalog,
    save_pools,
)
from .seeding import derive_seed
from .simulator import Simulator, load_seed_replies
from .validation import make_step_validator, salvage, validate_record

log = logging.getLogger(__name__)


def make_provider(config: RunConfig):
    p = config.provider
    if p.kind == "remote":
        return RemoteProvider(p.endpoint, p.model, p.api_key_env, p.max_concurrent, p.timeout, p.retries, p.backoff)
    if p.script:
        return ScriptedProvider.from_file(p.script, fallback=Simulator())
    return ScriptedProvider(fallback=Simulator())


def read_descriptions(path=None) -> list[str]:
    if path is None:
        return list(load_seed_replies())
    return [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip() and not line.startswith("#")]


def generate_catalog(descriptions, provider, denylist=(), retries: int = 2, prompt_dir=None) -> SchemaCatalog:
    """Stage 1 per description, then query derivation and merging."""
    schemas = [with_retries(lambda d=d: generate_intent_schema(d, provider, prompt_dir), retries) for d in descriptions]
    return build_catalog(schemas, denylist)


def generate_pools(catalog: SchemaCatalog, provider, retries: int = 2, prompt_dir=None) -> dict:
    """Stage 2 for transactional intents; query pools are pooled from producers."""
    pools = {
        s.intent_name: with_retries(lambda s=s: generate_slot_value_pool(s, provider, prompt_dir), retries, (ParseError, ProviderError, TypeMismatch))
        for s in catalog.transactional()
    }
    return derive_query_pools(catalog, pools)


@dataclass
class Outcome:
    index: int
    status: str  # validated | salvaged | discarded
    record: ConversationRecord | None = None
    reasons: list = field(default_factory=list)
    plan: dict | None = None


def generate_conversation(index: int, catalog: SchemaCatalog, pools: dict, providers, config: RunConfig) -> Outcome:
    """Plan, generate and validate one conversation; never raises for content errors."""
    seed = derive_seed(config.seed, "conversation", index)
    primary = choose_primary(catalog, config.seed, index)
    cid = f"conv-{index:05d}"
    try:
        plan = build_plan(primary, catalog, pools, provider_for(providers, "planner"), config.sampling, seed, config.limits.retries, config.prompt_dir)
    except (TodgenError, ValueError) as exc:
        return Outcome(index, "discarded", reasons=[{"check": "plan_error", "detail": str(exc), "turn_index": None}])
    rules = compile_conversation_rules(plan)
    plan_record = plan_to_dict(plan, rules)
    validator = make_step_validator(rules, provider_for(providers, "validator"), catalog, config.validation.trials, config.validation.rule_aware, config.prompt_dir)
    status = "validated"
    try:
        record = run_conversation(plan, rules, catalog, providers, config.limits, validator, cid, config.prompt_dir)
    except AbortedConversation as aborted:
        record = salvage(aborted, provider_for(providers, "closing"), config.validation.salvage_min_turns, config.prompt_dir)
        if record is None:
            reason = {"check": aborted.reason, "detail": aborted.detail, "turn_index": aborted.turn_index}
            return Outcome(index, "discarded", reasons=[reason], plan=plan_record)
        status = "salvaged"
    record.id = cid
    record.seed = seed
    record.plan = plan_to_dict(plan)
    verdict = validate_record(record, catalog)
    if not verdict.passed:
        reasons = [{"check": r.check, "detail": r.detail, "turn_index": r.turn_index} for r in verdict.reasons]
        return Outcome(index, "discarded", reasons=reasons, plan=plan_record)
    return Outcome(index, status, record, plan=plan_record)


def _write_jsonl(path: Path, rows) -> None:
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def run_pipeline(config: RunConfig, providers=None) -> dict:
    """Generate ``config.n`` conversations and write every output file.

    Returns the manifest.  Outputs depend only on the config and providers;
    job scheduling never changes them.
    """
    config.validate()
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    providers = providers if providers is not None else make_provider(config)
    planner = provider_for(providers, "planner")
    if config.catalog:
        catalog = load_catalog(config.catalog)
    else:
        catalog = generate_catalog(read_descriptions(config.descriptions), planner, config.denylist, config.limits.retries, config.prompt_dir)
    pools = load_pools(config.pools) if config.pools else generate_pools(catalog, planner, config.limits.retries, config.prompt_dir)
    pools = derive_query_pools(catalog, pools)
    unknown = set(config.ood_intents) - {i.intent_name for i in catalog}
    if unknown:
        raise ConfigError(f"held-out intents not in catalog: {sorted(unknown)}")

    with ThreadPoolExecutor(max_workers=config.jobs) as pool:
        outcomes = list(pool.map(lambda k: generate_conversation(k, catalog, pools, providers, config), range(config.n)))

    kept = [o.record for o in outcomes if o.record is not None]
    kept = assign_splits(kept, catalog, config.ood_intents, config.split_ratios, derive_seed(config.seed, "splits"))
    stats = compute_stats(kept, catalog)

    save_catalog(catalog, out / "catalog.jsonl")
    save_pools([pools[k] for k in sorted(pools)], out / "pools.jsonl")
    write_dataset(kept, out / "dataset.jsonl")
    _write_jsonl(out / "plans.jsonl", [o.plan | {"id": f"conv-{o.index:05d}"} for o in outcomes if o.plan is not None])
    _write_jsonl(
        out / "verdicts.jsonl",
        [{"conversation_id": f"conv-{o.index:05d}", "passed": o.status != "discarded", "status": o.status, "reasons": o.reasons} for o in outcomes],
    )
    (out / "stats.json").write_text(json.dumps(stats.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if config.validation.sarcasm_review:
        rows = [
            {"conversation_id": r.id, "turn_index": i, "text": t.text}
            for r in kept
            for i, t in enumerate(r.turns)
            if t.kind == "user" and t.phenomenon == "sarcasm"
        ]
        _write_jsonl(Path(config.validation.sarcasm_review), rows)

    counts = {s: sum(1 for o in outcomes if o.status == s) for s in ("validated", "salvaged", "discarded")}
    manifest = {
        "seed": config.seed,
        "config_hash": config.digest(),
        "generated": len(outcomes),
        **counts,
        "conversation_seeds": {f"conv-{o.index:05d}": derive_seed(config.seed, "conversation", o.index) for o in outcomes},
        "files": ["catalog.jsonl", "pools.jsonl", "dataset.jsonl", "plans.jsonl", "verdicts.jsonl", "stats.json"],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    log.info("generated %d: %s", len(outcomes), counts)
    return manifest
