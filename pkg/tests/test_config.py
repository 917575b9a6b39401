import os
from pathlib import Path

import pytest

from jerkgrpo import path
from jerkgrpo.config import ExperimentConfig, config_hash, load_config, parse_config
from jerkgrpo.errors import ConfigError


def test_defaults() -> None:
    """
    Check that an empty document gives the default experiment.
    """
    cfg = parse_config("")

    assert cfg == ExperimentConfig()
    assert cfg.env.model.link_lengths == (1.0, 1.0)
    assert cfg.reward.mode == "smooth"
    assert cfg.reward.lam == 0.2
    assert cfg.grpo.group_size == 8
    assert cfg.grpo.learning_rate == 3e-4
    assert cfg.bc.learning_rate == 1e-3


def test_parse_sections() -> None:
    """
    Check that every section is read and typed.
    """
    cfg = parse_config(
        """
kinematics:
  link_lengths: [1.0, 0.8, 0.5]
  joint_limits: [[-3.0, 3.0], [-2.0, 2.0], [-2.0, 2.0]]
  derivative_method: finite_difference
env:
  horizon: 30
  goal_region: [0.5, 1.5]
policy:
  hidden: [32, 32]
grpo:
  learning_rate: 1e-4
  max_grad_norm: 1
reward:
  mode: binary
demo:
  speed_margin: 0.8
"""
    )

    assert cfg.env.model.dof == 3
    assert cfg.env.horizon == 30
    assert cfg.env.goal_region == (0.5, 1.5)
    assert cfg.kinematics.derivative_method == "finite_difference"
    assert cfg.policy.hidden == (32, 32)
    assert cfg.grpo.learning_rate == 1e-4
    assert cfg.grpo.max_grad_norm == 1.0
    assert cfg.reward.mode == "binary"
    assert cfg.demo.speed_margin == 0.8


def test_overrides() -> None:
    """
    Check that dotted overrides replace file values.
    """
    cfg = parse_config("grpo:\n  seed: 1\n", {"grpo.seed": 4, "reward.mode": "random"})

    assert cfg.grpo.seed == 4
    assert cfg.reward.mode == "random"

    with pytest.raises(ConfigError):
        parse_config("", {"seed": 4})


@pytest.mark.parametrize(
    "text",
    [
        "env: [1, 2",
        "- a list\n- not a mapping\n",
        "physics:\n  gravity: 9.81\n",
        "env:\n  horizon_steps: 40\n",
        "env:\n  horizon: forty\n",
        "env:\n  horizon: 2\n",
        "reward:\n  mode: dense\n",
        "grpo:\n  clip_eps: true\n",
        "kinematics:\n  link_lengths: [1.0, -1.0]\n",
        "kinematics:\n  derivative_method: symbolic\n",
        "demo:\n  mode: spline\n",
        "env: 3\n",
    ],
)
def test_invalid_configs(text: str) -> None:
    """
    Check that malformed or inconsistent configs raise ConfigError.
    """
    with pytest.raises(ConfigError):
        parse_config(text)


def test_load_config(tmp_path: Path) -> None:
    """
    Check reading a config from disk.
    """
    filename = tmp_path / "experiment.yaml"
    filename.write_text("env:\n  horizon: 20\n")

    assert load_config(str(filename)).env.horizon == 20
    assert load_config() == ExperimentConfig()

    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.yaml"))


def test_config_hash() -> None:
    """
    Check that the hash identifies the resolved settings.
    """
    default = config_hash(parse_config(""))

    assert len(default) == 64
    assert config_hash(ExperimentConfig()) == default

    # spelling out a default does not change the experiment
    assert config_hash(parse_config("reward:\n  lam: 0.2\n")) == default

    assert config_hash(parse_config("reward:\n  lam: 0.3\n")) != default
    assert config_hash(parse_config("", {"grpo.seed": 1})) != default


def test_run_directory(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    """
    Check how output paths are resolved.
    """
    monkeypatch.setenv(path.RUN_DIR_VARIABLE, str(tmp_path))

    assert path.get_run_directory() == str(tmp_path)
    assert path.output_path("runs/a") == os.path.join(str(tmp_path), "runs/a")
    assert path.output_path("/abs/dir") == "/abs/dir"

    monkeypatch.delenv(path.RUN_DIR_VARIABLE)
    assert path.get_run_directory() == os.getcwd()
