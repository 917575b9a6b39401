"""
A deterministic planar reach-and-hold environment.

The agent commands joint-position deltas in chunks of `chunk_size`
control steps. An episode succeeds once the end-effector stays within
`success_radius` of the goal for `hold_steps` consecutive steps; success
is latched for the rest of the episode. Episodes always run to the
horizon.
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .errors import ContractViolation, EpisodeFinished
from .kinematics import (
    MIN_SAMPLES,
    JointTrajectory,
    ManipulatorModel,
    forward_kinematics,
)
from .smoothness import SmoothnessReport, trajectory_report
from .utils import derive_rng

__all__ = ["default_model", "EnvConfig", "Observation", "Rollout", "PlanarReachEnv"]

logger = logging.getLogger(__name__)


def default_model() -> ManipulatorModel:
    """
    The default 2-link arm: unit links, elbow kept strictly bent.
    """
    return ManipulatorModel((1.0, 1.0), ((-math.pi, math.pi), (0.1, 2.8)))


@dataclass(frozen=True)
class EnvConfig:
    """
    The parameters of the reach-and-hold task.
    """

    model: ManipulatorModel = field(default_factory=default_model)

    # control period in seconds
    dt: float = 0.1

    # maximum number of control steps
    horizon: int = 40

    # the success radius (m) and the consecutive steps required inside it
    success_radius: float = 0.05
    hold_steps: int = 5

    # the number of actions emitted per policy query
    chunk_size: int = 4

    # goals are sampled uniformly on the annulus (inner, outer) in meters
    goal_region: Tuple[float, float] = (0.6, 1.6)

    # the largest joint delta per step in radians
    action_scale: float = 0.2

    seed: int = 0

    # start from a uniformly random configuration instead of home
    random_start: bool = False

    # the discount is fixed to 1 (the reward is trajectory-level)
    gamma: float = 1.0

    def __post_init__(self) -> None:

        object.__setattr__(
            self, "goal_region", tuple(float(r) for r in self.goal_region)
        )
        inner, outer = self.goal_region

        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ContractViolation(f"dt must be positive, got {self.dt}.")

        if not (self.horizon >= self.hold_steps >= 1):
            raise ContractViolation(
                "Need horizon >= hold_steps >= 1, "
                f"got {self.horizon}, {self.hold_steps}."
            )

        # the executed path must support the jerk stencil
        if self.horizon + 1 < MIN_SAMPLES:
            raise ContractViolation(
                f"horizon must be at least {MIN_SAMPLES - 1}, got {self.horizon}."
            )

        if not self.success_radius > 0:
            raise ContractViolation(
                f"success_radius must be positive, got {self.success_radius}."
            )

        if self.chunk_size < 1:
            raise ContractViolation(f"chunk_size must be >= 1, got {self.chunk_size}.")

        if not (0.0 <= inner <= outer <= self.model.reach):
            raise ContractViolation(
                f"Goal annulus {self.goal_region} must lie within the reach "
                f"{self.model.reach}."
            )

        if not self.action_scale > 0:
            raise ContractViolation(
                f"action_scale must be positive, got {self.action_scale}."
            )

        if self.gamma != 1.0:
            raise ContractViolation("Only gamma = 1 is supported.")

    @property
    def obs_dim(self) -> int:
        """
        The length of an observation feature vector (q, goal, step_frac).
        """
        return self.model.dof + 3

    @property
    def act_dim(self) -> int:
        """
        The length of a flattened action chunk.
        """
        return self.model.dof * self.chunk_size

    def as_dict(self) -> Dict[str, Any]:
        values = asdict(self)
        values["model"] = {
            "link_lengths": list(self.model.link_lengths),
            "joint_limits": [list(lim) for lim in self.model.joint_limits],
        }
        values["goal_region"] = list(self.goal_region)
        return values


@dataclass(frozen=True)
class Observation:
    """
    The low-dimensional state seen by the policy.
    """

    q: np.ndarray
    goal: np.ndarray
    step_frac: float

    def features(self) -> np.ndarray:
        """
        The flat (dof + 3,) feature vector fed to the policy network.
        """
        return np.concatenate([self.q, self.goal, [self.step_frac]])


@dataclass(frozen=True)
class Rollout:
    """
    One finished episode.

    `observations` holds the observation at every policy query; step t
    was generated from `observations[chunk_index[t]]` as the
    `chunk_slot[t]`-th action of that chunk.
    """

    observations: List[Observation]
    actions: np.ndarray
    behavior_logps: np.ndarray
    chunk_index: np.ndarray
    chunk_slot: np.ndarray
    success: bool
    joint_traj: JointTrajectory
    smoothness: SmoothnessReport
    goal: np.ndarray
    episode_seed: int
    ee_path: np.ndarray
    success_latched: np.ndarray

    def __len__(self) -> int:
        return int(self.actions.shape[0])


class PlanarReachEnv(object):
    """
    A single-owner, mutable reach-and-hold episode.

    The same (config, episode_seed, action sequence) always reproduces
    the same rollout bit-for-bit.
    """

    def __init__(self, config: EnvConfig, derivative_method: str = "analytic"):
        """
        Create a new environment.

        Parameters
        ----------
        config: EnvConfig
            The task parameters.
        derivative_method: str
            How J' and J'' are computed when the rollout is finalized.
        """
        self.config = config
        self.derivative_method = derivative_method

        # no episode until `reset` is called
        self._started = False

    def reset(self, episode_seed: int) -> Observation:
        """
        Start a new episode.

        Parameters
        ----------
        episode_seed: int
            Any integer; with `config.seed` it selects the goal (and start).

        Returns
        -------
        obs: Observation
            The initial observation.
        """
        cfg = self.config
        model = cfg.model
        rng = derive_rng(cfg.seed, episode_seed)

        # uniform on the annulus: the squared radius is uniform
        inner, outer = cfg.goal_region
        radius = math.sqrt(rng.uniform(inner**2, outer**2))
        angle = rng.uniform(-math.pi, math.pi)
        self.goal = np.array([radius * math.cos(angle), radius * math.sin(angle)])

        if cfg.random_start:
            self.q = rng.uniform(model.lower, model.upper)
        else:
            self.q = model.home()

        self.episode_seed = int(episode_seed)
        self.steps = 0
        self.success = False
        self._inside = 0

        self._qs: List[np.ndarray] = [self.q.copy()]
        self._ee: List[np.ndarray] = [forward_kinematics(model, self.q)]
        self._latched: List[bool] = [False]
        self._actions: List[np.ndarray] = []
        self._logps: List[float] = []
        self._chunk_index: List[int] = []
        self._chunk_slot: List[int] = []
        self._observations: List[Observation] = []
        self._started = True

        return self.observe()

    @property
    def done(self) -> bool:
        return self._started and self.steps >= self.config.horizon

    def observe(self) -> Observation:
        """
        The current observation.
        """
        return Observation(
            q=self.q.copy(),
            goal=self.goal.copy(),
            step_frac=self.steps / self.config.horizon,
        )

    def step_chunk(
        self, actions: np.ndarray, logps: Optional[np.ndarray] = None
    ) -> Tuple[Observation, bool]:
        """
        Execute a chunk of joint-delta actions.

        Each action is clipped to +/- action_scale and the resulting
        configuration is clamped to the joint limits. Steps past the
        horizon are dropped.

        Parameters
        ----------
        actions: np.ndarray
            Shape (chunk_size, dof) or the flattened (chunk_size * dof,).
        logps: np.ndarray, optional
            The per-step log-densities of `actions` under the sampling
            policy (zero if not given).

        Returns
        -------
        obs: Observation
            The observation after the chunk.
        done: bool
            True once the horizon has been reached.

        Raises
        ------
        EpisodeFinished:
            If the episode is already done.
        """
        cfg = self.config
        dof = cfg.model.dof

        if not self._started:
            raise ContractViolation("Call reset() before step_chunk().")

        if self.steps >= cfg.horizon:
            raise EpisodeFinished("Episode finished: cannot act after the horizon.")

        flat = np.asarray(actions, dtype=float)

        if flat.size == 0 or flat.size % dof or flat.size // dof > cfg.chunk_size:
            raise ContractViolation(
                f"Expected up to {cfg.chunk_size} actions of {dof} joints, "
                f"got shape {flat.shape}."
            )

        chunk = flat.reshape(-1, dof)

        if not np.all(np.isfinite(chunk)):
            raise ContractViolation("Actions must be finite.")

        step_logps = np.zeros(len(chunk)) if logps is None else np.asarray(logps)

        if step_logps.shape != (len(chunk),):
            raise ContractViolation(
                f"Got {step_logps.shape} log-densities for {len(chunk)} actions."
            )

        # remember the observation that produced this chunk
        self._observations.append(self.observe())
        query = len(self._observations) - 1

        for slot, action in enumerate(chunk):

            if self.steps >= cfg.horizon:
                break

            action = np.clip(action, -cfg.action_scale, cfg.action_scale)
            self.q = cfg.model.clamp(self.q + action)
            self.steps += 1

            ee = forward_kinematics(cfg.model, self.q)

            # count consecutive steps inside the success radius
            if np.linalg.norm(ee - self.goal) <= cfg.success_radius:
                self._inside += 1
            else:
                self._inside = 0

            # once latched, success never reverts
            if self._inside >= cfg.hold_steps:
                self.success = True

            self._qs.append(self.q.copy())
            self._ee.append(ee)
            self._latched.append(self.success)
            self._actions.append(action)
            self._logps.append(float(step_logps[slot]))
            self._chunk_index.append(query)
            self._chunk_slot.append(slot)

        return self.observe(), self.done

    def finalize(self) -> Rollout:
        """
        Assemble the finished episode and compute its smoothness.

        Raises
        ------
        ContractViolation:
            If the episode is not done yet.
        """
        if not self.done:
            raise ContractViolation("Cannot finalize an episode that is not done.")

        cfg = self.config
        traj = JointTrajectory(cfg.dt, np.stack(self._qs))

        rollout = Rollout(
            observations=list(self._observations),
            actions=np.stack(self._actions),
            behavior_logps=np.asarray(self._logps, dtype=float),
            chunk_index=np.asarray(self._chunk_index, dtype=int),
            chunk_slot=np.asarray(self._chunk_slot, dtype=int),
            success=bool(self.success),
            joint_traj=traj,
            smoothness=trajectory_report(cfg.model, traj, self.derivative_method),
            goal=self.goal.copy(),
            episode_seed=self.episode_seed,
            ee_path=np.stack(self._ee),
            success_latched=np.asarray(self._latched, dtype=bool),
        )

        logger.debug(
            f"Episode {self.episode_seed}: success={rollout.success} "
            f"mean_jerk={rollout.smoothness.mean_jerk_norm:.4f}"
        )

        return rollout
