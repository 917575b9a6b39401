import json
from pathlib import Path
from typing import Dict

import numpy as np
import pytest

from jerkgrpo import loader
from jerkgrpo.cli import EXIT_OK, EXIT_USAGE, main
from jerkgrpo.path import MANIFEST_NAME, RUN_DIR_VARIABLE

# small enough to train in a few seconds
TINY = """
policy:
  hidden: [8]
bc:
  iterations: 5
  batch_size: 16
  n_demos: 3
grpo:
  batches: 2
  group_size: 2
  epochs_per_batch: 1
"""


@pytest.fixture
def run_dir(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> Path:
    monkeypatch.setenv(RUN_DIR_VARIABLE, str(tmp_path))
    return tmp_path


@pytest.fixture
def tiny_config(run_dir: Path) -> str:
    path = run_dir / "tiny.yaml"
    path.write_text(TINY)
    return str(path)


def printed(text: str) -> Dict[str, str]:
    """
    Parse the `key: value` lines a command printed.
    """
    return dict(line.split(": ", 1) for line in text.splitlines() if ": " in line)


def test_usage_errors(run_dir: Path) -> None:
    """
    Check the exit codes of bad invocations.
    """
    assert main(["--version"]) == EXIT_OK
    assert main([]) == EXIT_USAGE
    assert main(["fly"]) == EXIT_USAGE
    assert main(["train", "--stage", "rl"]) == EXIT_USAGE
    assert main(["demonstrate", "--set", "grpo.batches"]) == EXIT_USAGE
    assert main(["demonstrate", "--set", "env.horizon_steps=3"]) == EXIT_USAGE


def test_corrupted_config(run_dir: Path) -> None:
    """
    Check that a broken config exits with the usage code.
    """
    path = run_dir / "broken.yaml"
    path.write_text("env: [1, 2")

    assert main(["demonstrate", "--config", str(path)]) == EXIT_USAGE
    missing = str(run_dir / "none.yaml")
    assert main(["analyze", "missing.csv", "--config", missing]) == EXIT_USAGE


def test_grpo_needs_a_bc_checkpoint(run_dir: Path, tiny_config: str) -> None:
    """
    Check that GRPO without a BC checkpoint fails cleanly.
    """
    code = main(["train", "--stage", "grpo", "--config", tiny_config, "--out", "grpo"])

    assert code == EXIT_USAGE
    assert not (run_dir / "grpo" / "log.csv").exists()


def test_no_demonstrations(run_dir: Path, capsys: pytest.CaptureFixture) -> None:
    """
    Check that zero episodes give a header-only file.
    """
    assert main(["demonstrate", "--episodes", "0", "--out", "empty.jsonl"]) == EXIT_OK

    header, rollouts = loader.read_rollouts(str(run_dir / "empty.jsonl"))

    assert header["format"] == loader.ROLLOUTS
    assert rollouts == []
    assert printed(capsys.readouterr().out)["episodes"] == "0"

    # the file holds the header record and nothing else
    assert len((run_dir / "empty.jsonl").read_text().splitlines()) == 1

    assert main(["demonstrate", "--help"]) == EXIT_OK
    assert "header" in capsys.readouterr().out


def test_analyze_demonstrations(run_dir: Path, capsys: pytest.CaptureFixture) -> None:
    """
    Check that analyzing written demonstrations reproduces their jerk.
    """
    assert main(["demonstrate", "--episodes", "4", "--out", "demos.jsonl"]) == EXIT_OK
    mean_jerk = float(printed(capsys.readouterr().out)["mean_jerk"])

    with open(run_dir / MANIFEST_NAME) as f:
        manifest = json.load(f)
    assert manifest["command"] == "demonstrate"
    assert manifest["files"] == ["demos.jsonl"]

    demos = str(run_dir / "demos.jsonl")
    assert main(["analyze", demos, "--out", "demos.smoothness.csv"]) == EXIT_OK

    _, columns, rows = loader.read_table(
        str(run_dir / "demos.smoothness.csv"), loader.METRICS
    )

    assert len(rows) == 4
    jerk = [float(cells[columns.index("mean_jerk")]) for _, cells in rows]
    assert np.mean(jerk) == pytest.approx(mean_jerk, rel=1e-12)


def write_steps(path: Path, dt: float, q: np.ndarray) -> None:
    """
    Write a single-episode per-step CSV of a one-joint trajectory.
    """
    columns = ["episode", "t", "q1"]
    with loader.TableWriter(
        str(path), loader.make_header(loader.STEPS, "hand", dt=dt), columns
    ) as writer:
        for t, value in enumerate(q):
            writer.append([0, t, value])


def analyze_one(run_dir: Path, steps: Path, config: Path) -> float:
    out = run_dir / "report.csv"
    code = main(["analyze", str(steps), "--config", str(config), "--out", str(out)])
    assert code == EXIT_OK

    _, columns, rows = loader.read_table(str(out), loader.METRICS)
    assert len(rows) == 1
    return float(rows[0][1][columns.index("mean_jerk")])


def test_analyze_known_trajectories(run_dir: Path) -> None:
    """
    Check analyze on a resting arm and on a unit-speed circular motion.
    """
    config = run_dir / "one_link.yaml"
    config.write_text(
        """
kinematics:
  link_lengths: [1.0]
  joint_limits: [[-10.0, 10.0]]
env:
  goal_region: [0.2, 0.9]
"""
    )
    steps = run_dir / "steps.csv"

    write_steps(steps, 0.1, np.full(21, 0.3))
    assert analyze_one(run_dir, steps, config) == pytest.approx(0.0, abs=1e-8)

    # a unit link turning at 1 rad/s has a unit jerk everywhere
    dt = 0.01
    write_steps(steps, dt, dt * np.arange(101))
    assert analyze_one(run_dir, steps, config) == pytest.approx(1.0, abs=1e-3)

    # the two-link default arm cannot read a one-joint file
    assert main(["analyze", str(steps), "--out", str(run_dir / "x.csv")]) == EXIT_USAGE


def test_training_is_reproducible(run_dir: Path, tiny_config: str) -> None:
    """
    Check that equal seeds and configs give byte-identical outputs.
    """
    assert main(["train", "--stage", "bc", "--config", tiny_config, "--out", "bc"]) == 0

    checkpoint = str(run_dir / "bc" / "bc.json")
    for out in ("a", "b"):
        code = main(
            ["train", "--stage", "grpo", "--config", tiny_config, "--init", checkpoint,
             "--seed", "3", "--out", out]
        )
        assert code == EXIT_OK

    for name in ("log.csv", "grpo.json", MANIFEST_NAME):
        first, second = run_dir / "a" / name, run_dir / "b" / name
        assert first.read_bytes() == second.read_bytes()

    _, _, rows = loader.read_table(str(run_dir / "a" / "log.csv"), loader.TRAINING_LOG)
    assert len(rows) == 2

    code = main(
        ["eval", checkpoint, str(run_dir / "a" / "grpo.json"), "--scripted",
         "--config", tiny_config, "--episodes", "2", "--out", "eval"]
    )
    assert code == EXIT_OK

    _, columns, rows = loader.read_table(
        str(run_dir / "eval" / "eval.csv"), loader.METRICS
    )
    assert [cells[0] for _, cells in rows] == ["bc", "grpo", "scripted"]
    bc_jerk = float(rows[0][1][columns.index("mean_jerk")])

    steps = run_dir / "eval" / "steps.csv"
    _, trajectories = loader.read_step_csv(str(steps))
    assert sorted(trajectories) == [0, 1]

    # steps.csv holds the very episodes the bc row was computed from
    out = str(run_dir / "eval" / "steps.smoothness.csv")
    assert main(["analyze", str(steps), "--config", tiny_config, "--out", out]) == 0
    _, columns, rows = loader.read_table(out, loader.METRICS)
    jerk = [float(cells[columns.index("mean_jerk")]) for _, cells in rows]
    assert np.mean(jerk) == pytest.approx(bc_jerk, rel=1e-9)


def test_ablate(run_dir: Path, tiny_config: str, capsys: pytest.CaptureFixture) -> None:
    """
    Check that an ablation writes one row per (mode, seed) plus the means.
    """
    code = main(
        ["ablate", "--config", tiny_config, "--set", "grpo.batches=1",
         "--seeds", "0", "1", "--episodes", "2", "--out", "ablate"]
    )
    assert code == EXIT_OK

    directory = run_dir / "ablate"
    assert (directory / "bc.json").exists()
    assert (directory / "smooth_seed1_log.csv").exists()

    _, columns, rows = loader.read_table(str(directory / "summary.csv"), loader.METRICS)

    assert columns == ["mode", "seed", "success_rate", "mean_jerk", "peak_jerk"]
    assert len(rows) == 3 * 2 + 3
    assert [cells[1] for _, cells in rows[-3:]] == ["mean"] * 3
    assert len(capsys.readouterr().out.splitlines()) == 9


def metric_rows(path: Path) -> Dict[str, Dict[str, float]]:
    """
    Success rate and mean jerk of a metrics CSV, keyed by label or mode:seed.
    """
    _, columns, rows = loader.read_table(str(path), loader.METRICS)
    table = {}
    for _, cells in rows:
        key = cells[0] if columns[1] != "seed" else f"{cells[0]}:{cells[1]}"
        table[key] = {
            name: float(cells[columns.index(name)])
            for name in ("success_rate", "mean_jerk")
        }
    return table


@pytest.mark.slow
def test_default_pipeline(run_dir: Path, capsys: pytest.CaptureFixture) -> None:
    """
    Run the default pipeline end to end and check its directional results.
    """
    assert main(["train", "--stage", "bc", "--out", "runs"]) == EXIT_OK
    capsys.readouterr()

    # smooth GRPO in the BC directory picks up bc.json
    code = main(
        ["train", "--stage", "grpo", "--reward-mode", "smooth", "--out", "runs"]
    )
    assert code == EXIT_OK
    quarters = printed(capsys.readouterr().out)
    assert float(quarters["last_quarter_jerk"]) < float(quarters["first_quarter_jerk"])

    runs = run_dir / "runs"
    code = main(
        ["eval", str(runs / "bc.json"), str(runs / "grpo.json"), "--scripted",
         "--episodes", "100", "--seed", "1000", "--out", "eval"]
    )
    assert code == EXIT_OK

    evaluated = metric_rows(run_dir / "eval" / "eval.csv")
    bc, grpo = evaluated["bc"], evaluated["grpo"]

    assert evaluated["scripted"]["success_rate"] == 1.0
    assert grpo["mean_jerk"] <= bc["mean_jerk"]
    assert abs(grpo["success_rate"] - bc["success_rate"]) <= 0.05

    code = main(
        ["ablate", "--init", str(runs / "bc.json"), "--seeds", "0", "1", "2", "3", "4",
         "--episodes", "50", "--out", "ablate"]
    )
    assert code == EXIT_OK

    summary = metric_rows(run_dir / "ablate" / "summary.csv")
    smooth = summary["smooth:mean"]

    assert smooth["success_rate"] >= summary["random:mean"]["success_rate"]
    assert smooth["mean_jerk"] < summary["binary:mean"]["mean_jerk"]
