import csv
import subprocess
import sys

import pytest

from floatctl import cli
from floatctl.harness import STEP_LOG_COLUMNS, TRAIN_LOG_COLUMNS


def test_verify_reward_suite_passes(tmp_path, capsys):
    assert cli.main(["verify", "reward", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "[PASS]" in out and "[FAIL]" not in out


def test_verify_failure_gives_nonzero_exit(monkeypatch, tmp_path):
    from floatctl import verify

    monkeypatch.setitem(verify.SUITES, "reward", [("forced", lambda: (False, "broken"))])
    assert cli.main(["verify", "reward", "--out", str(tmp_path)]) == 1


def test_verify_unknown_suite_is_usage_error():
    with pytest.raises(SystemExit) as info:
        cli.main(["verify", "nonsense"])
    assert info.value.code == 2


def test_train_then_eval(tmp_path):
    cfg = tmp_path / "tiny.yaml"
    cfg.write_text("ppo:\n  batch_episodes: 4\n  max_episodes: 8\n  minibatch_size: 128\n"
                   "  epochs: 1\nepisode:\n  train_time_limit: 2.0\n")
    run = tmp_path / "run"
    assert cli.main(["train", "--config", str(cfg), "--mode", "ppo-only", "--seed", "1",
                     "--out", str(run), "--quiet"]) == 0
    with open(run / "train_log.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == TRAIN_LOG_COLUMNS and len(rows) == 3
    assert "mode: ppo_only" in (run / "config.yaml").read_text()

    sched = tmp_path / "s.yaml"
    sched.write_text("duration: 6\nevents:\n  - {time: 2, dv: [0.1, 0]}\n")
    ev = tmp_path / "ev"
    assert cli.main(["eval", "--checkpoint", str(run / "checkpoint.fcp"), "--schedule", str(sched),
                     "--out", str(ev)]) == 0
    with open(ev / "eval_log.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == STEP_LOG_COLUMNS and len(rows) == 61
    assert (ev / "eval_metrics.csv").read_text().count("\n") == 3


def test_eval_missing_checkpoint_reports_error(tmp_path, capsys):
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "none.fcp"), "--out",
                     str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_config_command_prints_yaml(capsys):
    assert cli.main(["config"]) == 0
    assert "ppo:" in capsys.readouterr().out


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "floatctl.cli", "verify", "reward", "--out",
                           str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
