import json
from pathlib import Path

import numpy as np
import pytest

from driftlab.cli import main
from driftlab.storage import load_checkpoint, load_dataset

TINY_CONFIG = """\
simulator:
  households: 2
  days: 3
  train_days: 2
  test_days: 1
  sample_interval: 120
  seed: 7
model:
  embed_dim: 4
  rounds: 1
  hidden_dim: 6
  horizon: 120
training:
  epochs: 2
  lr: 0.001
  strategy: streak
  seeds: [0]
"""


@pytest.fixture
def workdir(tmp_path):
    cfg = tmp_path / "config.yaml"
    cfg.write_text(TINY_CONFIG)
    data = tmp_path / "data"
    run = tmp_path / "run"
    return {"cfg": str(cfg), "data": data, "run": run, "root": tmp_path}


def simulate(workdir):
    rc = main(["simulate", "--config", workdir["cfg"],
               "--out", str(workdir["data"])])
    assert rc == 0
    return sorted(str(p) for p in workdir["data"].glob("household_*.jsonl"))


def test_simulate_writes_valid_files(workdir):
    files = simulate(workdir)
    assert len(files) == 2
    for i, path in enumerate(files):
        loaded = load_dataset(path)
        assert loaded.task == i
        assert loaded.train.days == 2 and loaded.test.days == 1


def test_simulate_deterministic_bytes(workdir, tmp_path):
    files = simulate(workdir)
    other = tmp_path / "data2"
    rc = main(["simulate", "--config", workdir["cfg"], "--out", str(other)])
    assert rc == 0
    for a in files:
        b = other / Path(a).name
        assert Path(a).read_bytes() == b.read_bytes()


def test_train_evaluate_report_pipeline(workdir, capsys):
    files = simulate(workdir)
    rc = main(["train", "--config", workdir["cfg"], "--strategy", "streak",
               "--out", str(workdir["run"])] + files)
    assert rc == 0
    for k in range(2):
        assert (workdir["run"] / f"checkpoint_streak_seed0_session{k}.ckpt").exists()
    ledger = json.loads(
        (workdir["run"] / "ledger_streak_seed0.json").read_text())
    assert len(ledger["sessions"]) == 2
    assert ledger["total_samples"] == sum(
        r["train_samples"] for r in ledger["sessions"])

    rc = main(["evaluate", "--config", workdir["cfg"], "--strategy", "streak",
               "--out", str(workdir["run"]), "--render"] + files)
    assert rc == 0
    rendered = capsys.readouterr().out
    assert "streak_seed0" in rendered

    csv_lines = (workdir["run"] / "retention.csv").read_text().splitlines()
    assert csv_lines[0].startswith("strategy,trained_through,test_dataset")
    # row count: strategies x sum over sessions of (k + 1) = 1 x (1 + 2)
    assert len(csv_lines) == 1 + 3

    payload = json.loads((workdir["run"] / "retention.json").read_text())
    cells = payload["streak_seed0"]["cells"]
    assert len(cells) == 3
    for cell in cells:
        counts = cell["counts"]
        used = sum(counts[k] for k in
                   ("moved_correct", "moved_wrong", "moved_missed"))
        if used:
            assert cell["percentages"]["moved_correct"] == pytest.approx(
                100.0 * counts["moved_correct"] / used)

    rc = main(["report", "--out", str(workdir["run"])])
    assert rc == 0
    out = capsys.readouterr().out
    assert "final-row mean moved-correct" in out
    assert "ledger_streak_seed0.json" in out


def test_resume_equals_uninterrupted(workdir):
    files = simulate(workdir)
    full = workdir["root"] / "full"
    rc = main(["train", "--config", workdir["cfg"], "--strategy", "streak",
               "--out", str(full)] + files)
    assert rc == 0

    resumed = workdir["root"] / "resumed"
    rc = main(["train", "--config", workdir["cfg"], "--strategy", "streak",
               "--out", str(resumed)] + files[:1])
    assert rc == 0
    rc = main(["train", "--config", workdir["cfg"], "--strategy", "streak",
               "--out", str(resumed), "--resume",
               str(resumed / "checkpoint_streak_seed0_session0.ckpt")] + files)
    assert rc == 0

    a, _ = load_checkpoint(full / "checkpoint_streak_seed0_session1.ckpt")
    b, _ = load_checkpoint(resumed / "checkpoint_streak_seed0_session1.ckpt")
    assert np.array_equal(a.params.flat, b.params.flat)
    assert np.array_equal(a.adam.m, b.adam.m)
    assert a.buffer.session_sizes() == b.buffer.session_sizes()
    got = [(e.origin, e.index, e.distance) for e in a.buffer.all_entries()]
    want = [(e.origin, e.index, e.distance) for e in b.buffer.all_entries()]
    assert got == want


def test_resume_joint_rebuilds_history(workdir):
    files = simulate(workdir)
    full = workdir["root"] / "jfull"
    main(["train", "--config", workdir["cfg"], "--strategy", "joint",
          "--out", str(full)] + files)
    resumed = workdir["root"] / "jres"
    main(["train", "--config", workdir["cfg"], "--strategy", "joint",
          "--out", str(resumed)] + files[:1])
    rc = main(["train", "--config", workdir["cfg"], "--strategy", "joint",
               "--out", str(resumed), "--resume",
               str(resumed / "checkpoint_joint_seed0_session0.ckpt")] + files)
    assert rc == 0
    a, _ = load_checkpoint(full / "checkpoint_joint_seed0_session1.ckpt")
    b, _ = load_checkpoint(resumed / "checkpoint_joint_seed0_session1.ckpt")
    assert np.array_equal(a.params.flat, b.params.flat)


def test_finetuned_skips_cl_state(workdir):
    files = simulate(workdir)
    rc = main(["train", "--config", workdir["cfg"], "--strategy", "finetuned",
               "--out", str(workdir["run"])] + files)
    assert rc == 0
    state, _ = load_checkpoint(
        workdir["run"] / "checkpoint_finetuned_seed0_session1.ckpt")
    assert state.anchor is None and state.buffer is None


def test_evaluate_missing_checkpoint_is_data_error(workdir):
    files = simulate(workdir)
    rc = main(["evaluate", "--config", workdir["cfg"], "--strategy", "streak",
               "--out", str(workdir["run"])] + files)
    assert rc == 3


def test_config_error_exit_code(workdir, tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("training:\n  epochz: 1\n")
    rc = main(["simulate", "--config", str(bad), "--out", str(tmp_path / "d")])
    assert rc == 2


def test_data_error_exit_code(workdir, tmp_path):
    missing = str(tmp_path / "nope.jsonl")
    rc = main(["train", "--config", workdir["cfg"], "--out",
               str(workdir["run"]), missing])
    assert rc == 3


def test_corrupt_dataset_exit_code(workdir):
    files = simulate(workdir)
    text = Path(files[0]).read_text().splitlines()
    Path(files[0]).write_text("\n".join(text[:1] + ["{broken"] + text[1:]))
    rc = main(["train", "--config", workdir["cfg"], "--out",
               str(workdir["run"])] + files)
    assert rc == 3


def test_project_buffer_values(tmp_path, capsys):
    rc = main(["project-buffer", "--mean-size", "1000", "--beta", "10",
               "--sessions", "10"])
    assert rc == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[1] == "0,1000.000"
    assert lines[2] == "1,1100.000"
    assert lines[-1].startswith("10,1292.897")


def test_project_buffer_with_ledger(workdir, tmp_path):
    files = simulate(workdir)
    main(["train", "--config", workdir["cfg"], "--strategy", "streak",
          "--out", str(workdir["run"])] + files)
    out_csv = tmp_path / "proj.csv"
    rc = main(["project-buffer", "--mean-size", "22", "--beta", "10",
               "--sessions", "2",
               "--ledger", str(workdir["run"] / "ledger_streak_seed0.json"),
               "--out", str(out_csv)])
    assert rc == 0
    lines = out_csv.read_text().strip().splitlines()
    assert lines[0] == "session,projected_size,measured_size"
    assert len(lines) == 4


def test_delta_flag_overrides_horizon(workdir):
    files = simulate(workdir)
    rc = main(["train", "--config", workdir["cfg"], "--strategy", "finetuned",
               "--delta", "240", "--out", str(workdir["run"])] + files)
    assert rc == 0
    state, _ = load_checkpoint(
        workdir["run"] / "checkpoint_finetuned_seed0_session0.ckpt")
    assert state.model_cfg.horizon == 240
