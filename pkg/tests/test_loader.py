import json
from pathlib import Path
from typing import List

import numpy as np
import pytest

from jerkgrpo import loader
from jerkgrpo.demos import ScriptedController, run_episode
from jerkgrpo.env import EnvConfig, PlanarReachEnv, Rollout
from jerkgrpo.errors import FormatError
from jerkgrpo.policy import PolicyConfig, init_params
from jerkgrpo.trainer import GrpoLogRow


def scripted_rollouts(n: int = 2) -> List[Rollout]:
    cfg = EnvConfig()
    env = PlanarReachEnv(cfg)
    return [run_episode(env, ScriptedController(cfg), seed) for seed in range(n)]


def assert_same_rollout(a: Rollout, b: Rollout) -> None:
    assert np.array_equal(a.joint_traj.samples, b.joint_traj.samples)
    assert a.joint_traj.dt == b.joint_traj.dt
    assert np.array_equal(a.actions, b.actions)
    assert np.array_equal(a.chunk_index, b.chunk_index)
    assert np.array_equal(a.chunk_slot, b.chunk_slot)
    assert np.array_equal(a.goal, b.goal)
    assert np.array_equal(a.ee_path, b.ee_path)
    assert np.array_equal(a.success_latched, b.success_latched)
    assert a.success == b.success
    assert a.smoothness == b.smoothness
    assert a.episode_seed == b.episode_seed

    for x, y in zip(a.observations, b.observations):
        assert np.array_equal(x.features(), y.features())


def test_rollouts_round_trip(tmp_path: Path) -> None:
    """
    Check that JSON-lines rollouts are read back exactly.
    """
    path = str(tmp_path / "demos.jsonl")
    rollouts = scripted_rollouts()

    loader.write_rollouts(path, rollouts, EnvConfig().horizon, "abc123")
    header, loaded = loader.read_rollouts(path)

    assert header == {"format": loader.ROLLOUTS, "version": 1, "config_hash": "abc123"}
    assert len(loaded) == 2
    for a, b in zip(rollouts, loaded):
        assert_same_rollout(a, b)


def test_empty_rollout_file(tmp_path: Path) -> None:
    """
    Check that a file without episodes still has its header.
    """
    path = str(tmp_path / "empty.jsonl")

    loader.write_rollouts(path, [], 40, "abc123")

    with open(path) as f:
        assert len(f.read().splitlines()) == 1

    assert loader.read_rollouts(path)[1] == []


def test_malformed_rollout_names_the_line(tmp_path: Path) -> None:
    """
    Check that a broken record is reported with its line number.
    """
    path = str(tmp_path / "broken.jsonl")
    loader.write_rollouts(path, scripted_rollouts(1), 40, "abc123")

    with open(path, "a") as f:
        f.write('{"goal": [1.0, 0.0]}\n')

    with pytest.raises(FormatError, match=":3:"):
        loader.read_rollouts(path)


def test_wrong_format_or_version(tmp_path: Path) -> None:
    """
    Check that headers are validated.
    """
    path = str(tmp_path / "log.csv")
    loader.write_table(path, loader.make_header(loader.METRICS, "abc"), ["a"], [[1.0]])

    with pytest.raises(FormatError):
        loader.read_table(path, loader.TRAINING_LOG)

    with open(path, "w") as f:
        header = {"format": loader.METRICS, "version": 99}
        f.write("# " + json.dumps(header) + "\na\n1.0\n")

    with pytest.raises(FormatError, match="version"):
        loader.read_table(path, loader.METRICS)

    with open(path, "w") as f:
        f.write("a\n1.0\n")

    with pytest.raises(FormatError):
        loader.read_table(path, loader.METRICS)


def test_table_round_trip(tmp_path: Path) -> None:
    """
    Check that a training log is read back exactly.
    """
    path = str(tmp_path / "grpo_log.csv")
    rows = [
        GrpoLogRow(0, 0.1, 0.5, 0.30000000000000004, 1e-7, 0.0, 0),
        GrpoLogRow(1, -0.25, 1.0, 0.2, 2.5e-5, 0.125, 0),
    ]

    with loader.TableWriter(
        path, loader.make_header(loader.TRAINING_LOG, "abc"), GrpoLogRow.COLUMNS
    ) as writer:
        for row in rows:
            writer.append(row.as_row())

        with pytest.raises(FormatError):
            writer.append([1, 2])

    header, columns, cells = loader.read_table(path, loader.TRAINING_LOG)

    assert header["config_hash"] == "abc"
    assert tuple(columns) == GrpoLogRow.COLUMNS
    assert [GrpoLogRow.from_row(c) for _, c in cells] == rows
    assert [lineno for lineno, _ in cells] == [3, 4]


def test_step_csv(tmp_path: Path) -> None:
    """
    Check the per-step layout and that trajectories are read back exactly.
    """
    path = str(tmp_path / "steps.csv")
    rollouts = scripted_rollouts()

    loader.write_step_csv(path, rollouts, "abc")

    header, columns, rows = loader.read_table(path, loader.STEPS)

    assert header["dt"] == EnvConfig().dt
    assert columns == [
        "episode", "t", "q1", "q2", "a1", "a2", "ee_x", "ee_y", "success_latched"
    ]
    assert len(rows) == 2 * (EnvConfig().horizon + 1)

    # the final sample of an episode has no action
    assert rows[EnvConfig().horizon][1][4:6] == ["nan", "nan"]

    _, trajectories = loader.read_step_csv(path)

    assert sorted(trajectories) == [0, 1]
    for episode, rollout in enumerate(rollouts):
        assert np.array_equal(trajectories[episode].samples, rollout.joint_traj.samples)
        assert trajectories[episode].dt == rollout.joint_traj.dt


def test_step_csv_errors(tmp_path: Path) -> None:
    """
    Check that malformed per-step rows name their line.
    """
    path = str(tmp_path / "steps.csv")
    loader.write_step_csv(path, scripted_rollouts(1), "abc")

    with open(path) as f:
        lines = f.read().splitlines()

    # a non-numeric joint position on the second data row
    broken = lines[3].split(",")
    broken[2] = "oops"
    with open(path, "w") as f:
        f.write("\n".join(lines[:3] + [",".join(broken)] + lines[4:]) + "\n")

    with pytest.raises(FormatError, match=":4:"):
        loader.read_step_csv(path)

    # a skipped time index
    with open(path, "w") as f:
        f.write("\n".join(lines[:3] + lines[4:]) + "\n")

    with pytest.raises(FormatError, match=":4:"):
        loader.read_step_csv(path)

    # a row with a missing cell
    with open(path, "w") as f:
        f.write("\n".join(lines[:5] + [lines[5].rsplit(",", 1)[0]]) + "\n")

    with pytest.raises(FormatError, match=":6:"):
        loader.read_step_csv(path)


def test_checkpoint_round_trip(tmp_path: Path) -> None:
    """
    Check that checkpoints restore the parameters exactly.
    """
    path = str(tmp_path / "bc.json")
    params = init_params(5, 8, 0.2, PolicyConfig(hidden=(6,)))

    loader.save_checkpoint(path, params, "abc", stage="bc")
    loaded, header = loader.load_checkpoint(path, obs_dim=5, act_dim=8)

    assert np.array_equal(loaded.flat(), params.flat())
    assert loaded.hidden == (6,)
    assert loaded.action_scale == 0.2
    assert header["stage"] == "bc"
    assert header["config_hash"] == "abc"

    with pytest.raises(FormatError):
        loader.load_checkpoint(path, obs_dim=6)

    with pytest.raises(FormatError):
        loader.load_checkpoint(path, act_dim=4)


def test_corrupted_checkpoint(tmp_path: Path) -> None:
    """
    Check that broken checkpoints raise FormatError.
    """
    path = str(tmp_path / "bc.json")
    params = init_params(5, 8, 0.2, PolicyConfig(hidden=(6,)))
    loader.save_checkpoint(path, params, "abc")

    with open(path) as f:
        document = json.load(f)

    document["tensors"][0]["shape"] = [7, 5]
    with open(path, "w") as f:
        json.dump(document, f)

    with pytest.raises(FormatError):
        loader.load_checkpoint(path)

    document["version"] = 2
    with open(path, "w") as f:
        json.dump(document, f)

    with pytest.raises(FormatError, match="version"):
        loader.load_checkpoint(path)

    with open(path, "w") as f:
        f.write("{not json")

    with pytest.raises(FormatError):
        loader.load_checkpoint(path)
