"""
Load rollouts, training logs and ablation results into XArray objects.
"""
from typing import Any, List, Mapping, Sequence, Tuple

import numpy as np

from xarray import DataArray, Dataset

from .env import Rollout
from .trainer import EvalResult, GrpoLogRow

__all__ = [
    "ABLATION_METRICS",
    "rollout_dataset",
    "training_log_dataset",
    "ablation_table",
    "ablation_summary_rows",
]

# the metrics reported per (mode, seed) in an ablation
ABLATION_METRICS = ("success_rate", "mean_jerk", "peak_jerk")


def rollout_dataset(rollout: Rollout) -> Dataset:
    """
    Convert a finished rollout into a Dataset.

    Parameters
    ----------
    rollout: Rollout
        The episode to convert.

    Returns
    -------
    Dataset
        Joint positions and end-effector path over `time`, actions over
        `step`, and the episode properties as attributes.
    """
    traj = rollout.joint_traj
    dof = traj.dof
    nsteps = len(rollout)

    joints = [f"q{j + 1}" for j in range(dof)]

    q = DataArray(
        traj.samples,
        dims=["time", "joint"],
        coords={"time": traj.times, "joint": joints},
    )
    q.attrs["units"] = "rad"
    q.time.attrs["units"] = "s"

    ee = DataArray(
        rollout.ee_path,
        dims=["time", "axis"],
        coords={"time": traj.times, "axis": ["x", "y"]},
    )
    ee.attrs["units"] = "m"

    # the action in `step` t moves the arm from time t to t + 1
    actions = DataArray(
        rollout.actions,
        dims=["step", "joint"],
        coords={"step": np.arange(nsteps), "joint": joints},
    )
    actions.attrs["units"] = "rad"

    dataset = Dataset(
        {
            "q": q,
            "ee": ee,
            "actions": actions,
            "behavior_logp": DataArray(rollout.behavior_logps, dims=["step"]),
            "success_latched": DataArray(rollout.success_latched, dims=["time"]),
        }
    )

    # and save the episode properties
    dataset.attrs["episode_seed"] = rollout.episode_seed
    dataset.attrs["success"] = int(rollout.success)
    dataset.attrs["goal"] = rollout.goal.tolist()
    dataset.attrs["dt"] = traj.dt
    for key, value in rollout.smoothness.as_dict().items():
        dataset.attrs[key] = value

    return dataset


def training_log_dataset(rows: Sequence[GrpoLogRow]) -> Dataset:
    """
    Convert GRPO log rows into a Dataset indexed by `batch`.
    """
    batches = np.array([row.batch for row in rows], dtype=int)

    return Dataset(
        {
            name: DataArray(
                np.array([getattr(row, name) for row in rows]),
                dims=["batch"],
                coords={"batch": batches},
            )
            for name in GrpoLogRow.COLUMNS
            if name != "batch"
        }
    )


def ablation_table(results: Mapping[Tuple[str, int], EvalResult]) -> DataArray:
    """
    Arrange ablation results as a (mode, seed, metric) DataArray.

    Parameters
    ----------
    results: Mapping[(mode, seed), EvalResult]
        One evaluation per reward mode and seed. Missing pairs are NaN.

    Returns
    -------
    table: DataArray
    """
    modes: List[str] = []
    seeds: List[int] = []
    for mode, seed in results:
        if mode not in modes:
            modes.append(mode)
        if seed not in seeds:
            seeds.append(seed)

    data = np.full((len(modes), len(seeds), len(ABLATION_METRICS)), np.nan)

    for (mode, seed), result in results.items():
        data[modes.index(mode), seeds.index(seed)] = [
            getattr(result, metric) for metric in ABLATION_METRICS
        ]

    return DataArray(
        data,
        dims=["mode", "seed", "metric"],
        coords={"mode": modes, "seed": seeds, "metric": list(ABLATION_METRICS)},
        name="ablation",
    )


def ablation_summary_rows(table: DataArray) -> List[List[Any]]:
    """
    One row per (mode, seed) followed by one mean row per mode.

    Every row is [mode, seed-or-"mean", *metrics].
    """
    rows: List[List[Any]] = []

    for mode in table.mode.values:
        for seed in table.seed.values:
            values = table.sel(mode=mode, seed=seed).values
            rows.append([str(mode), int(seed), *(float(v) for v in values)])

    means = table.mean(dim="seed")
    for mode in table.mode.values:
        values = means.sel(mode=mode).values
        rows.append([str(mode), "mean", *(float(v) for v in values)])

    return rows
