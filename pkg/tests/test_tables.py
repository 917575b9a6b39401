import numpy as np
import pytest

from jerkgrpo.demos import ScriptedController, run_episode
from jerkgrpo.env import EnvConfig, PlanarReachEnv
from jerkgrpo.tables import (
    ABLATION_METRICS,
    ablation_summary_rows,
    ablation_table,
    rollout_dataset,
    training_log_dataset,
)
from jerkgrpo.trainer import EvalResult, GrpoLogRow


def test_rollout_dataset() -> None:
    """
    Check the dimensions and attributes of a rollout dataset.
    """
    cfg = EnvConfig()
    rollout = run_episode(PlanarReachEnv(cfg), ScriptedController(cfg), 3)

    ds = rollout_dataset(rollout)

    assert ds.q.dims == ("time", "joint")
    assert ds.q.shape == (cfg.horizon + 1, 2)
    assert ds.actions.shape == (cfg.horizon, 2)
    assert list(ds.joint.values) == ["q1", "q2"]
    assert ds.time.values[-1] == pytest.approx(cfg.horizon * cfg.dt)

    assert ds.attrs["episode_seed"] == 3
    assert ds.attrs["success"] == 1
    assert ds.attrs["mean_jerk"] == rollout.smoothness.mean_jerk_norm

    # the last latched flag is the episode outcome
    assert bool(ds.success_latched.values[-1]) == rollout.success


def test_training_log_dataset() -> None:
    """
    Check that log rows become variables over `batch`.
    """
    rows = [GrpoLogRow(b, 0.1 * b, 0.5, 0.2, 1e-3, 0.0, 0) for b in range(4)]

    ds = training_log_dataset(rows)

    assert list(ds.batch.values) == [0, 1, 2, 3]
    assert set(ds.data_vars) == set(GrpoLogRow.COLUMNS) - {"batch"}
    assert float(ds.mean_reward.sel(batch=2)) == pytest.approx(0.2)


def test_ablation_table() -> None:
    """
    Check the layout of the ablation table and its summary rows.
    """
    results = {}
    for mode, offset in (("binary", 0.0), ("random", 0.1), ("smooth", 0.2)):
        for seed in (0, 1):
            jerk = 1.0 - offset + seed
            results[(mode, seed)] = EvalResult(0.5 + offset, jerk, 2.0, 10)

    table = ablation_table(results)

    assert table.dims == ("mode", "seed", "metric")
    assert table.shape == (3, 2, len(ABLATION_METRICS))

    smooth = table.sel(mode="smooth", seed=1, metric="mean_jerk")
    assert float(smooth) == pytest.approx(1.8)

    rows = ablation_summary_rows(table)

    # per-seed rows first, then one mean per mode
    assert len(rows) == 3 * 2 + 3
    assert rows[0] == ["binary", 0, 0.5, 1.0, 2.0]
    assert [row[1] for row in rows[-3:]] == ["mean"] * 3
    assert rows[-1][0] == "smooth"
    assert rows[-1][3] == pytest.approx(1.3)


def test_missing_ablation_runs() -> None:
    """
    Check that missing (mode, seed) pairs are NaN.
    """
    table = ablation_table(
        {
            ("smooth", 0): EvalResult(1.0, 0.1, 0.2, 5),
            ("binary", 1): EvalResult(1.0, 0.3, 0.4, 5),
        }
    )

    assert np.all(np.isnan(table.sel(mode="smooth", seed=1).values))
