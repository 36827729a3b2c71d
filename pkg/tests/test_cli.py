"""Command line pipeline: plan, collect, learn, train, eval, simulate."""
from __future__ import annotations

import json

import pytest

from desktamp import constraints
from desktamp.cli import main
from desktamp.dataset import load as load_dataset


@pytest.fixture()
def db_file(tmp_path, coffee):
    path = tmp_path / "coffee.constraints"
    constraints.save(coffee.db, path)
    return path


def test_plan_prints_the_skeleton(db_file, capsys):
    rc = main([
        "plan", "--task", "coffee-2d", "--constraints", str(db_file),
        "--seed", "0",
    ])
    out = capsys.readouterr().out
    assert rc == 0
    assert "pick pod" in out
    assert "attach pod machine" in out


def test_plan_writes_bound_plan_file(db_file, tmp_path, capsys):
    out_file = tmp_path / "plan.sexp"
    rc = main([
        "plan", "--task", "coffee-2d", "--constraints", str(db_file),
        "--seed", "1", "--out", str(out_file),
    ])
    assert rc == 0
    text = out_file.read_text()
    assert "move" in text and "attach" in text


def test_collect_learn_train_eval_stats_pipeline(db_file, tmp_path, capsys):
    demos = tmp_path / "demos.jsonl"
    rc = main([
        "collect", "--task", "coffee-2d", "--constraints", str(db_file),
        "--operator", "oracle", "--episodes", "4", "--cmd-noise", "0.2",
        "--out", str(demos),
    ])
    assert rc == 0
    episodes, meta = load_dataset(demos)
    assert len(episodes) == 4
    assert meta["task"] == "coffee-2d" and meta["operator"] == "oracle"

    learned = tmp_path / "learned.constraints"
    rc = main([
        "learn-constraints", "--task", "coffee-2d",
        "--demos", str(demos), "--out", str(learned),
    ])
    assert rc == 0
    db = constraints.load(learned)
    assert db.has_preattach("pod", "machine")
    assert db.has_grasp("pod")

    policy = tmp_path / "policy.pkl"
    rc = main(["train", "--demos", str(demos), "--out", str(policy)])
    assert rc == 0
    assert policy.exists()

    stats_file = tmp_path / "eval.json"
    rc = main([
        "eval", "--task", "coffee-2d", "--constraints", str(db_file),
        "--policy", str(policy), "--n", "2", "--seeds", "1",
        "--stats", str(stats_file),
    ])
    assert rc == 0
    payload = json.loads(stats_file.read_text())
    assert payload["task"] == "coffee-2d"
    assert len(payload["blocks"]) == 1
    assert payload["blocks"][0]["rollouts"] >= 2


def test_stats_prints_summary_json(db_file, tmp_path, capsys):
    demos = tmp_path / "demos.jsonl"
    main([
        "collect", "--task", "coffee-2d", "--constraints", str(db_file),
        "--episodes", "2", "--out", str(demos),
    ])
    capsys.readouterr()
    rc = main(["stats", "--demos", str(demos)])
    assert rc == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["episodes"] == 2
    assert summary["success_rate"] == 1.0
    assert summary["meta"]["task"] == "coffee-2d"


def test_fleet_sim_abstract_writes_stats(tmp_path, capsys):
    stats_file = tmp_path / "fleet.json"
    rc = main([
        "fleet-sim", "--abstract", "--n", "3", "--minutes", "60",
        "--stats", str(stats_file),
    ])
    assert rc == 0
    payload = json.loads(stats_file.read_text())
    assert payload["min_fleet"] == 3
    assert payload["completed"] == 117
    assert payload["utilization"] >= 0.98
    assert "meets" in capsys.readouterr().out


def test_fleet_sim_full_requires_a_task():
    with pytest.raises(SystemExit):
        main(["fleet-sim", "--n", "2", "--minutes", "1"])


def test_collect_rejects_human_operator(tmp_path):
    with pytest.raises(SystemExit, match="serve"):
        main([
            "collect", "--task", "coffee-2d", "--operator", "human",
            "--out", str(tmp_path / "x.jsonl"),
        ])


def test_bad_noise_spec_is_rejected(db_file, tmp_path):
    with pytest.raises(SystemExit, match="bad noise spec"):
        main([
            "collect", "--task", "coffee-2d", "--constraints", str(db_file),
            "--episodes", "1", "--noise", "1,2,3",
            "--out", str(tmp_path / "x.jsonl"),
        ])


def test_config_overrides_are_applied(db_file, tmp_path, capsys):
    cfg = tmp_path / "overrides.json"
    cfg.write_text(json.dumps({"planner": {"timeout": 0.0}}))
    with pytest.raises(Exception, match="budget"):
        main([
            "plan", "--task", "coffee-2d", "--constraints", str(db_file),
            "--seed", "0", "--config", str(cfg),
        ])
