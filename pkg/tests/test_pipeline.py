from __future__ import annotations

import json

import pytest

from todgen.config import RunConfig, config_from_dict, load_config
from todgen.dataset import read_dataset
from todgen.errors import ConfigError
from todgen.pipeline import run_pipeline
from todgen.planner import TOKENS, SamplingConfig
from todgen.providers import ScriptedProvider
from todgen.simulator import Simulator


def _config(tmp_path, name, **kw):
    return RunConfig(seed=kw.pop("seed", 11), n=kw.pop("n", 12), out=str(tmp_path / name), **kw)


@pytest.fixture(scope="module")
def catalog_path(fixtures_dir):
    return str(fixtures_dir / "catalog.jsonl")


def test_run_is_deterministic_across_job_counts(tmp_path, catalog_path):
    a = run_pipeline(_config(tmp_path, "a", jobs=1, catalog=catalog_path))
    b = run_pipeline(_config(tmp_path, "b", jobs=4, catalog=catalog_path))
    assert a == b
    for name in a["files"] + ["manifest.json"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_manifest_accounts_for_every_conversation(tmp_path, catalog_path):
    manifest = run_pipeline(_config(tmp_path, "m", n=15, catalog=catalog_path))
    assert manifest["generated"] == 15
    assert manifest["validated"] + manifest["salvaged"] + manifest["discarded"] == 15
    verdicts = [json.loads(line) for line in (tmp_path / "m" / "verdicts.jsonl").read_text().splitlines()]
    assert len(verdicts) == 15
    kept = read_dataset(tmp_path / "m" / "dataset.jsonl")
    assert len(kept) == manifest["validated"] + manifest["salvaged"]
    assert len(set(manifest["conversation_seeds"].values())) == 15


def test_zero_phenomenon_rate_yields_no_tokens(tmp_path, catalog_path):
    config = _config(tmp_path, "z", n=10, catalog=catalog_path, sampling=SamplingConfig(phenomenon_rate=0.0))
    run_pipeline(config)
    text = (tmp_path / "z" / "dataset.jsonl").read_text()
    assert not any(tok in text for tok in TOKENS.values())
    assert all(not r.phenomena for r in read_dataset(tmp_path / "z" / "dataset.jsonl"))


def test_tokens_never_reach_the_dataset(tmp_path, catalog_path):
    config = _config(tmp_path, "t", n=12, catalog=catalog_path, sampling=SamplingConfig(phenomenon_rate=1.0))
    run_pipeline(config)
    records = read_dataset(tmp_path / "t" / "dataset.jsonl")
    assert records and all(r.phenomena for r in records)
    assert not any(tok in (t.text or "") for r in records for t in r.turns for tok in TOKENS.values())


def test_unanimous_scripted_run_validates_everything(tmp_path, catalog_path):
    manifest = run_pipeline(_config(tmp_path, "u", n=20, catalog=catalog_path))
    assert manifest["validated"] == 20


def test_disagreeing_validator_discards(tmp_path, catalog_path):
    sim = ScriptedProvider(fallback=Simulator())
    liar = ScriptedProvider(fallback=lambda prompt: "say()")
    manifest = run_pipeline(_config(tmp_path, "d", n=4, catalog=catalog_path), {"default": sim, "validator": liar})
    assert manifest["validated"] == 0
    reasons = [json.loads(line)["reasons"] for line in (tmp_path / "d" / "verdicts.jsonl").read_text().splitlines()]
    assert all(r and r[0]["check"] == "stage13_mismatch" for r in reasons)


@pytest.mark.parametrize(
    "data",
    [
        {"split_ratios": [0.5, 0.5, 0.5]},
        {"split_ratios": [0.9, 0.1]},
        {"n": -1},
        {"jobs": 0},
        {"sampling": {"phenomenon_rate": 2}},
        {"sampling": {"phenomenon_weights": {"yelling": 1}}},
        {"provider": {"kind": "remote"}},
        {"catalog": "/no/such/file"},
        {"unknown_key": 1},
        {"limits": {"max_turns": 1}},
    ],
)
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        config_from_dict(data).validate()


def test_unknown_ood_intent_is_a_config_error(tmp_path, catalog_path):
    with pytest.raises(ConfigError):
        run_pipeline(_config(tmp_path, "o", n=1, catalog=catalog_path, ood_intents=("fly_to_moon",)))


def test_load_config_yaml_and_overrides(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("seed: 3\nn: 7\nsampling:\n  intent_count_weights: {1: 1}\nsplit_ratios: [0.6, 0.2, 0.2]\n")
    config = load_config(path, n=2, provider="scripted")
    assert (config.seed, config.n, config.split_ratios) == (3, 2, (0.6, 0.2, 0.2))
    assert config.sampling.intent_count_weights == {1: 1.0}
    other = load_config(path, n=2, jobs=8)
    assert other.digest() == config.digest()  # jobs does not change outputs
    (tmp_path / "bad.yaml").write_text("- a list\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.yaml")
