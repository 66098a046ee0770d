#!/usr/bin/env python3
"""Test the command-line entry point and its exit codes."""

import sys, os

import pandas as pd
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "src")))
from main import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_VERIFY, main

SMOKE = """
experiment.env_kind = nav2d
env.n_hazards = 3
env.n_lidar = 8
train.epochs = 1
train.episodes_per_epoch = 2
train.horizon = 15
train.value_epochs = 1
train.minibatch_size = 32
train.hidden_sizes = 8, 8
output.record_wall_time = false
"""


@pytest.fixture(autouse=True)
def isolated(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("TRC_SEED", raising=False)


def write_config(tmp_path):
    path = tmp_path / "smoke.cfg"
    path.write_text(SMOKE + f"output.dir = {tmp_path / 'run'}\n")
    return str(path)


def test_train_eval_export_round(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["train", cfg, "--no-progress", "--preset", "td"]) == EXIT_OK
    run = tmp_path / "run"
    frame = pd.read_csv(run / "metrics.csv")
    assert frame["epoch"].tolist() == [1]
    assert "train.lam = 0.0" in (run / "config.cfg").read_text()

    final = str(run / "checkpoints" / "final.trc")
    assert main(["eval", final, "--config", cfg, "--episodes", "2"]) == EXIT_OK
    episodes = pd.read_csv(run / "checkpoints" / "eval_episodes.csv")
    assert len(episodes) == 2

    assert main(["export-plot-data", str(run / "metrics.csv"), str(tmp_path / "series")]) == EXIT_OK
    assert (tmp_path / "series" / "score.csv").exists()


def test_train_overrides_and_bad_override(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["train", cfg, "--no-progress", "--train.seed", "3",
                 "--constraint-mode", "expectation"]) == EXIT_OK
    assert "train.constraint_mode = expectation" in (tmp_path / "run" / "config.cfg").read_text()
    assert main(["train", cfg, "--no-progress", "--train.epochs", "0"]) == EXIT_USAGE
    assert main(["train", cfg, "--no-progress", "--bogus"]) == EXIT_USAGE


def test_missing_config_is_usage_error(tmp_path):
    assert main(["train", str(tmp_path / "absent.cfg")]) == EXIT_USAGE


def test_unknown_command_exits_with_usage_code():
    with pytest.raises(SystemExit) as err:
        main(["fly"])
    assert err.value.code == EXIT_USAGE


def test_verify_passes_and_writes_rows(tmp_path):
    out = tmp_path / "checks.csv"
    assert main(["verify", "--ensemble-size", "2", "--output", str(out)]) == EXIT_OK
    rows = pd.read_csv(out)
    assert set(rows.columns) == {"check", "lhs", "rhs", "slack", "passed", "skipped"}
    assert rows["passed"].all()


def test_verify_independent_pairs_passes(tmp_path):
    out = tmp_path / "checks.csv"
    assert main(["verify", "--ensemble-size", "20", "--perturbation", "-1", "--output", str(out)]) == EXIT_OK
    rows = pd.read_csv(out)
    assert rows["passed"].all()
    assert len(rows[rows["check"] == "theorem2"]) == 20


def test_verify_negative_control_fails():
    assert main(["verify", "--ensemble-size", "2", "--corrupt-rhs", "0.5"]) == EXIT_VERIFY


def test_verify_rejects_empty_ensemble():
    assert main(["verify", "--ensemble-size", "0"]) == EXIT_USAGE


def test_eval_rejects_zero_episodes(tmp_path):
    assert main(["eval", str(tmp_path / "model.trc"), "--episodes", "0"]) == EXIT_USAGE


def test_eval_corrupt_checkpoint_is_runtime_error(tmp_path):
    bad = tmp_path / "model.trc"
    bad.write_bytes(b"not a checkpoint")
    assert main(["eval", str(bad), "--episodes", "1"]) == EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
