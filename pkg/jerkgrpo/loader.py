"""
Read and write every file format emitted by jerkgrpo.

Each file starts with a header recording the format name, the format
version and the hash of the config that produced it:

- JSON-lines rollouts: the first line is the header object, then one
  episode per line.
- CSV tables (per-step trajectories, training logs, metrics): the first
  line is "# " followed by the header object as JSON, then the column
  names, then the rows.
- Checkpoints: one JSON document listing every tensor as
  (name, shape, row-major values).

Floats are written with full precision so that reading a file back
reproduces the values bit-for-bit.
"""
import csv
import json
import logging
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .env import Observation, Rollout
from .errors import FormatError
from .kinematics import JointTrajectory
from .policy import PolicyParams
from .smoothness import SmoothnessReport

__all__ = [
    "FORMAT_VERSION",
    "ROLLOUTS",
    "STEPS",
    "TRAINING_LOG",
    "METRICS",
    "CHECKPOINT",
    "make_header",
    "write_table",
    "read_table",
    "TableWriter",
    "rollout_to_record",
    "rollout_from_record",
    "write_rollouts",
    "read_rollouts",
    "step_columns",
    "write_step_csv",
    "read_step_csv",
    "save_checkpoint",
    "load_checkpoint",
]

logger = logging.getLogger(__name__)

# bumped whenever a format changes incompatibly
FORMAT_VERSION = 1

# the format names stored in the headers
ROLLOUTS = "jerkgrpo.rollouts"
STEPS = "jerkgrpo.steps"
TRAINING_LOG = "jerkgrpo.training_log"
METRICS = "jerkgrpo.metrics"
CHECKPOINT = "jerkgrpo.checkpoint"


def make_header(kind: str, config_hash: str, **extra: Any) -> Dict[str, Any]:
    """
    The header object written at the top of every file.
    """
    return {
        "format": kind,
        "version": FORMAT_VERSION,
        "config_hash": config_hash,
        **extra,
    }


def _check_header(header: Any, kind: str, path: str) -> Dict[str, Any]:
    """
    Validate a parsed header against the expected format.
    """
    if not isinstance(header, dict):
        raise FormatError(f"{path}:1: the header must be a JSON object.")

    if header.get("format") != kind:
        raise FormatError(
            f"{path}:1: expected a '{kind}' file, got '{header.get('format')}'."
        )

    if header.get("version") != FORMAT_VERSION:
        raise FormatError(
            f"{path}:1: unsupported version {header.get('version')} "
            f"(this build reads version {FORMAT_VERSION})."
        )

    return header


def _cell(value: Any) -> str:
    """
    Format one CSV cell (floats with full precision).
    """
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


class TableWriter(object):
    """
    Append rows to a versioned CSV file as they are produced.
    """

    def __init__(self, path: str, header: Dict[str, Any], columns: Sequence[str]):
        self.path = path
        self.columns = list(columns)
        self._file = open(path, "w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._file, lineterminator="\n")

        self._file.write("# " + json.dumps(header, sort_keys=True) + "\n")
        self._writer.writerow(self.columns)

    def append(self, row: Sequence[Any]) -> None:
        if len(row) != len(self.columns):
            raise FormatError(
                f"Row has {len(row)} cells but {self.path} "
                f"has {len(self.columns)} columns."
            )
        self._writer.writerow([_cell(v) for v in row])
        self._file.flush()

    def close(self) -> None:
        self._file.close()

    def __enter__(self) -> "TableWriter":
        return self

    def __exit__(self, *args: Any) -> None:
        self.close()


def write_table(
    path: str,
    header: Dict[str, Any],
    columns: Sequence[str],
    rows: Iterable[Sequence[Any]],
) -> None:
    """
    Write a complete versioned CSV table.
    """
    with TableWriter(path, header, columns) as writer:
        for row in rows:
            writer.append(row)


def read_table(
    path: str, kind: str
) -> Tuple[Dict[str, Any], List[str], List[Tuple[int, List[str]]]]:
    """
    Read a versioned CSV table.

    Parameters
    ----------
    path: str
        The file to read.
    kind: str
        The expected format name.

    Returns
    -------
    header: Dict
        The parsed header object.
    columns: List[str]
        The column names.
    rows: List[(int, List[str])]
        Every data row with its 1-based line number.

    Raises
    ------
    FormatError:
        If the header is missing or a row has the wrong number of cells.
    """
    with open(path, "r", newline="", encoding="utf-8") as f:
        lines = f.read().splitlines()

    if not lines or not lines[0].startswith("# "):
        raise FormatError(f"{path}:1: missing '# {{...}}' header line.")

    try:
        header = json.loads(lines[0][2:])
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}:1: unreadable header: {err}") from err

    _check_header(header, kind, path)

    if len(lines) < 2:
        raise FormatError(f"{path}:2: missing the column names.")

    columns = next(csv.reader([lines[1]]))

    rows = []
    for lineno, cells in enumerate(csv.reader(lines[2:]), start=3):

        # tolerate a trailing blank line
        if not cells:
            continue

        if len(cells) != len(columns):
            raise FormatError(
                f"{path}:{lineno}: expected {len(columns)} cells, got {len(cells)}."
            )

        rows.append((lineno, cells))

    return header, columns, rows


def rollout_to_record(rollout: Rollout, horizon: int) -> Dict[str, Any]:
    """
    One JSON-lines record for `rollout`.
    """
    traj = rollout.joint_traj

    # the step at which each chunk was queried
    query_steps = [
        int(np.argmax(rollout.chunk_index == k))
        for k in range(len(rollout.observations))
    ]

    return {
        "episode_seed": rollout.episode_seed,
        "goal": rollout.goal.tolist(),
        "success": rollout.success,
        "dt": traj.dt,
        "horizon": horizon,
        "q": traj.samples.tolist(),
        "actions": rollout.actions.tolist(),
        "behavior_logps": rollout.behavior_logps.tolist(),
        "chunk_index": rollout.chunk_index.tolist(),
        "chunk_slot": rollout.chunk_slot.tolist(),
        "query_steps": query_steps,
        "ee_path": rollout.ee_path.tolist(),
        "success_latched": rollout.success_latched.tolist(),
        "smoothness": rollout.smoothness.as_dict(),
    }


def rollout_from_record(record: Dict[str, Any]) -> Rollout:
    """
    Rebuild a Rollout from its JSON-lines record.
    """
    samples = np.asarray(record["q"], dtype=float)
    goal = np.asarray(record["goal"], dtype=float)
    horizon = int(record["horizon"])

    observations = [
        Observation(q=samples[s].copy(), goal=goal.copy(), step_frac=s / horizon)
        for s in record["query_steps"]
    ]

    dof = samples.shape[1]

    return Rollout(
        observations=observations,
        actions=np.asarray(record["actions"], dtype=float).reshape(-1, dof),
        behavior_logps=np.asarray(record["behavior_logps"], dtype=float),
        chunk_index=np.asarray(record["chunk_index"], dtype=int),
        chunk_slot=np.asarray(record["chunk_slot"], dtype=int),
        success=bool(record["success"]),
        joint_traj=JointTrajectory(float(record["dt"]), samples),
        smoothness=SmoothnessReport.from_dict(record["smoothness"]),
        goal=goal,
        episode_seed=int(record["episode_seed"]),
        ee_path=np.asarray(record["ee_path"], dtype=float),
        success_latched=np.asarray(record["success_latched"], dtype=bool),
    )


def write_rollouts(
    path: str, rollouts: Sequence[Rollout], horizon: int, config_hash: str
) -> None:
    """
    Write rollouts as JSON lines behind a header line.
    """
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(make_header(ROLLOUTS, config_hash), sort_keys=True) + "\n")
        for rollout in rollouts:
            record = rollout_to_record(rollout, horizon)
            f.write(json.dumps(record, sort_keys=True) + "\n")


def read_rollouts(path: str) -> Tuple[Dict[str, Any], List[Rollout]]:
    """
    Read a JSON-lines rollout file.

    Raises
    ------
    FormatError:
        Naming the line of the first malformed record.
    """
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()

    if not lines:
        raise FormatError(f"{path}:1: empty file, expected a header line.")

    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}:1: unreadable header: {err}") from err

    _check_header(header, ROLLOUTS, path)

    rollouts = []
    for lineno, line in enumerate(lines[1:], start=2):

        if not line.strip():
            continue

        try:
            rollouts.append(rollout_from_record(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as err:
            raise FormatError(
                f"{path}:{lineno}: malformed rollout record: {err}"
            ) from err

    return header, rollouts


def step_columns(dof: int) -> List[str]:
    """
    The per-step CSV columns for a `dof`-joint arm.
    """
    return (
        ["episode", "t"]
        + [f"q{j + 1}" for j in range(dof)]
        + [f"a{j + 1}" for j in range(dof)]
        + ["ee_x", "ee_y", "success_latched"]
    )


def write_step_csv(
    path: str,
    rollouts: Sequence[Rollout],
    config_hash: str,
    episodes: Optional[Sequence[int]] = None,
) -> None:
    """
    Write rollouts as one CSV row per sample (t = 0..T).

    The action in row t is the delta applied between t and t + 1, so the
    last row of each episode has `nan` actions.
    """
    if not rollouts:
        raise FormatError("Cannot write a per-step CSV without rollouts.")

    dof = rollouts[0].joint_traj.dof
    dt = rollouts[0].joint_traj.dt
    episodes = episodes if episodes is not None else list(range(len(rollouts)))

    header = make_header(STEPS, config_hash, dt=dt)

    with TableWriter(path, header, step_columns(dof)) as writer:
        for episode, rollout in zip(episodes, rollouts):

            samples = rollout.joint_traj.samples
            nsteps = len(rollout)

            for t in range(nsteps + 1):
                action = rollout.actions[t] if t < nsteps else np.full(dof, np.nan)
                writer.append(
                    [episode, t]
                    + list(samples[t])
                    + list(action)
                    + list(rollout.ee_path[t])
                    + [bool(rollout.success_latched[t])]
                )


def read_step_csv(path: str) -> Tuple[Dict[str, Any], Dict[int, JointTrajectory]]:
    """
    Read the joint trajectory of every episode in a per-step CSV.

    Only the `episode`, `t` and `q*` columns are needed.

    Returns
    -------
    header: Dict
        The file header (holds `dt`).
    trajectories: Dict[int, JointTrajectory]
        One trajectory per episode number, in file order.
    """
    header, columns, rows = read_table(path, STEPS)

    if "dt" not in header:
        raise FormatError(f"{path}:1: the header does not record 'dt'.")

    qcols = [i for i, name in enumerate(columns) if name.startswith("q")]

    if "episode" not in columns or "t" not in columns or not qcols:
        raise FormatError(f"{path}:2: need 'episode', 't' and 'q1'... columns.")

    iepisode, it = columns.index("episode"), columns.index("t")

    samples: Dict[int, List[List[float]]] = {}
    for lineno, cells in rows:
        try:
            episode, t = int(cells[iepisode]), int(cells[it])
            q = [float(cells[i]) for i in qcols]
        except ValueError as err:
            raise FormatError(f"{path}:{lineno}: malformed row: {err}") from err

        current = samples.setdefault(episode, [])
        if t != len(current):
            raise FormatError(f"{path}:{lineno}: expected t = {len(current)}, got {t}.")

        if not np.all(np.isfinite(q)):
            raise FormatError(f"{path}:{lineno}: joint positions must be finite.")

        current.append(q)

    try:
        trajectories = {
            episode: JointTrajectory(float(header["dt"]), np.array(qs))
            for episode, qs in samples.items()
        }
    except ValueError as err:
        raise FormatError(f"{path}: {err}") from err

    return header, trajectories


def save_checkpoint(
    path: str, params: PolicyParams, config_hash: str, **extra: Any
) -> None:
    """
    Save `params` as a versioned JSON checkpoint.
    """
    document = make_header(CHECKPOINT, config_hash, **extra)
    document["action_scale"] = params.action_scale
    document["tensors"] = [
        {"name": name, "shape": list(tensor.shape), "values": tensor.ravel().tolist()}
        for name, tensor in params.tensors()
    ]

    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, sort_keys=True)
        f.write("\n")


def load_checkpoint(
    path: str, obs_dim: Optional[int] = None, act_dim: Optional[int] = None
) -> Tuple[PolicyParams, Dict[str, Any]]:
    """
    Load a checkpoint written by `save_checkpoint`.

    Parameters
    ----------
    path: str
        The checkpoint file.
    obs_dim, act_dim: int, optional
        If given, the network must have exactly these input/output sizes.

    Returns
    -------
    params: PolicyParams
    header: Dict
        The remaining fields of the document.

    Raises
    ------
    FormatError:
        On a version mismatch, inconsistent tensors or mismatched sizes.
    """
    with open(path, "r", encoding="utf-8") as f:
        try:
            document = json.load(f)
        except json.JSONDecodeError as err:
            raise FormatError(
                f"{path}:{err.lineno}: unreadable checkpoint: {err}"
            ) from err

    _check_header(document, CHECKPOINT, path)

    try:
        tensors = {}
        for entry in document["tensors"]:
            values = np.asarray(entry["values"], dtype=float)
            tensors[entry["name"]] = values.reshape(entry["shape"])

        nlayers = (len(tensors) - 1) // 2
        params = PolicyParams(
            weights=tuple(tensors[f"W{l}"] for l in range(nlayers)),
            biases=tuple(tensors[f"b{l}"] for l in range(nlayers)),
            log_std=tensors["log_std"],
            action_scale=float(document["action_scale"]),
        )
    except (KeyError, TypeError, ValueError) as err:
        raise FormatError(f"{path}: inconsistent checkpoint tensors: {err}") from err

    if obs_dim is not None and params.obs_dim != obs_dim:
        raise FormatError(
            f"{path}: the checkpoint expects {params.obs_dim} inputs, "
            f"the config gives {obs_dim}."
        )

    if act_dim is not None and params.act_dim != act_dim:
        raise FormatError(
            f"{path}: the checkpoint emits {params.act_dim} actions, "
            f"the config needs {act_dim}."
        )

    header = {k: v for k, v in document.items() if k != "tensors"}

    return params, header
