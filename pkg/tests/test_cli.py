from __future__ import annotations

import json

import pytest

from frozen import FIXTURE_STATS
from todgen.cli import EXIT_FAILURES, EXIT_FATAL, EXIT_OK, main


def test_stats_json(fixtures_dir, capsys):
    code = main(["stats", str(fixtures_dir / "seed_dataset.jsonl"), "--catalog", str(fixtures_dir / "catalog.jsonl"), "--json"])
    assert code == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    for key, value in FIXTURE_STATS.items():
        assert out[key] == value, key


def test_stats_table(fixtures_dir, capsys):
    assert main(["stats", str(fixtures_dir / "seed_dataset.jsonl")]) == EXIT_OK
    assert "dialogues            50" in capsys.readouterr().out


def test_validate_exit_codes(fixtures_dir, capsys):
    catalog = str(fixtures_dir / "catalog.jsonl")
    assert main(["validate", str(fixtures_dir / "seed_dataset.jsonl"), "--catalog", catalog]) == EXIT_OK
    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert len(rows) == 50 and all(r["passed"] for r in rows)
    assert main(["validate", str(fixtures_dir / "defects.jsonl"), "--catalog", catalog]) == EXIT_FAILURES
    rows = {r["conversation_id"]: r for r in map(json.loads, capsys.readouterr().out.splitlines())}
    assert rows["clean"]["passed"] and not rows["hint_predicted"]["passed"]


def test_eval_gold_against_gold(fixtures_dir, capsys):
    gold = str(fixtures_dir / "eval_gold.jsonl")
    assert main(["eval", gold, gold, "--json"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["joint_goal_accuracy"] == report["exact_match_conversation"] == 100.0


def test_eval_table(fixtures_dir, capsys):
    assert main(["eval", str(fixtures_dir / "eval_gold.jsonl"), str(fixtures_dir / "eval_pred.jsonl")]) == EXIT_OK
    assert "JGA" in capsys.readouterr().out


def test_fatal_errors(tmp_path, fixtures_dir, capsys):
    assert main(["stats", str(tmp_path / "missing.jsonl")]) == EXIT_FATAL
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{oops\n")
    assert main(["stats", str(bad)]) == EXIT_FATAL
    assert main(["eval", str(fixtures_dir / "eval_gold.jsonl"), str(fixtures_dir / "seed_dataset.jsonl")]) == EXIT_FATAL
    assert main(["generate", "--n", "-1", "--out", str(tmp_path)]) == EXIT_FATAL
    assert "error:" in capsys.readouterr().err


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_generate_and_plan(tmp_path, fixtures_dir, capsys):
    out = tmp_path / "run"
    code = main(["generate", "--seed", "5", "--n", "3", "--jobs", "2", "--out", str(out)])
    assert code == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["generated"] == 3
    assert summary["validated"] + summary["salvaged"] + summary["discarded"] == 3
    for name in ("catalog.jsonl", "pools.jsonl", "dataset.jsonl", "plans.jsonl", "verdicts.jsonl", "stats.json", "manifest.json"):
        assert (out / name).exists(), name
    plans = tmp_path / "plans"
    code = main(["plan", "--catalog", str(out / "catalog.jsonl"), "--pools", str(out / "pools.jsonl"), "--n", "2", "--out", str(plans)])
    assert code == EXIT_OK
    assert len((plans / "plans.jsonl").read_text().splitlines()) == 2


def test_gen_intents(tmp_path, capsys):
    assert main(["gen-intents", "--out", str(tmp_path)]) == EXIT_OK
    assert "53 transactional + 47 query = 100 intents across 13 domains" in capsys.readouterr().out
    assert (tmp_path / "pools.jsonl").exists()
