"""
Controllers that drive a PlanarReachEnv, and demonstration collection.

A controller is queried once per chunk and returns the chunk of joint
deltas (plus their per-step log-densities, zero for scripted
controllers). `run_episode` plays one controller for a whole episode.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import policy
from .env import EnvConfig, Observation, PlanarReachEnv, Rollout
from .errors import ContractViolation, InfeasibleDemonstration
from .kinematics import two_link_ik
from .smoothness import sample_min_jerk_cartesian_traj, sample_min_jerk_joint_traj

__all__ = [
    "DEMO_MODES",
    "Controller",
    "ScriptedController",
    "BangBangController",
    "PolicyController",
    "DemoSet",
    "run_episode",
    "collect_demonstrations",
]

logger = logging.getLogger(__name__)

# the supported demonstration planners
DEMO_MODES = ("joint", "cartesian")

# the peak of s'(tau) of the minimum-jerk profile
_PEAK_PROFILE_RATE = 1.875


class Controller(object):
    """
    The interface shared by every controller.
    """

    def reset(self, obs: Observation) -> None:
        """
        Prepare for a new episode starting at `obs`.
        """

    def __call__(self, obs: Observation) -> Tuple[np.ndarray, np.ndarray]:
        """
        The next (chunk_size, dof) chunk and its per-step log-densities.
        """
        raise NotImplementedError


class _PlannedController(Controller):
    """
    Replays a precomputed joint path, then holds still.
    """

    def __init__(self, config: EnvConfig):
        self.config = config
        self._deltas = np.zeros((0, config.model.dof))
        self._cursor = 0

    def _plan(self, obs: Observation) -> np.ndarray:
        raise NotImplementedError

    def reset(self, obs: Observation) -> None:
        self._deltas = self._plan(obs)
        self._cursor = 0

    def __call__(self, obs: Observation) -> Tuple[np.ndarray, np.ndarray]:
        cfg = self.config
        chunk = np.zeros((cfg.chunk_size, cfg.model.dof))

        planned = self._deltas[self._cursor : self._cursor + cfg.chunk_size]
        chunk[: len(planned)] = planned
        self._cursor += cfg.chunk_size

        return chunk, np.zeros(cfg.chunk_size)


class ScriptedController(_PlannedController):
    """
    A minimum-jerk planner to the goal.

    The motion time is chosen so that no single step exceeds
    `speed_margin * action_scale`; the arm then holds at the goal for the
    rest of the episode.
    """

    def __init__(
        self, config: EnvConfig, mode: str = "joint", speed_margin: float = 0.9
    ):
        """
        Parameters
        ----------
        config: EnvConfig
            The task the controller acts in (a 2-link arm).
        mode: str
            "joint" interpolates each joint, "cartesian" follows the
            straight line to the goal through inverse kinematics.
        speed_margin: float
            The fraction of action_scale a single step may use.
        """
        if mode not in DEMO_MODES:
            raise ContractViolation(
                f"Unknown demonstration mode '{mode}'; use {DEMO_MODES}."
            )

        if not 0.0 < speed_margin < 1.0:
            raise ContractViolation(
                f"speed_margin must lie in (0, 1), got {speed_margin}."
            )

        super().__init__(config)
        self.mode = mode
        self.speed_margin = speed_margin

    def _plan(self, obs: Observation) -> np.ndarray:
        cfg = self.config
        model = cfg.model
        max_step = self.speed_margin * cfg.action_scale

        q_goal = two_link_ik(model, obs.goal, obs.q)

        # the discrete steps never exceed the peak profile rate / nsteps
        distance = float(np.max(np.abs(q_goal - obs.q)))
        nsteps = max(2, math.ceil(distance * _PEAK_PROFILE_RATE / max_step))

        # leave room to hold at the goal before the horizon
        budget = cfg.horizon - cfg.hold_steps

        while nsteps <= budget:

            if self.mode == "joint":
                traj = sample_min_jerk_joint_traj(
                    model, obs.q, q_goal, nsteps * cfg.dt, cfg.dt
                )
            else:
                traj = sample_min_jerk_cartesian_traj(
                    model, obs.q, obs.goal, nsteps * cfg.dt, cfg.dt
                )

            deltas = np.diff(traj.samples, axis=0)

            # the IK path can be faster than the joint bound predicts
            if np.max(np.abs(deltas)) <= max_step:
                return deltas

            nsteps += 1

        raise InfeasibleDemonstration(
            f"Infeasible demonstration: reaching {obs.goal} needs more than "
            f"{budget} steps at {max_step:.3f} rad/step."
        )


class BangBangController(_PlannedController):
    """
    Every joint moves at the full action_scale toward the goal, then stops.
    """

    def _plan(self, obs: Observation) -> np.ndarray:
        cfg = self.config
        q_goal = two_link_ik(cfg.model, obs.goal, obs.q)

        deltas = []
        q = obs.q.copy()
        while not np.allclose(q, q_goal, rtol=0.0, atol=1e-12):
            step = np.clip(q_goal - q, -cfg.action_scale, cfg.action_scale)
            deltas.append(step)
            q = q + step

        return np.array(deltas).reshape(-1, cfg.model.dof)


class PolicyController(Controller):
    """
    Queries a policy: sampled actions with an rng, the mean action without.
    """

    def __init__(
        self, params: policy.PolicyParams, rng: Optional[np.random.Generator] = None
    ):
        self.params = params
        self.rng = rng

    def __call__(self, obs: Observation) -> Tuple[np.ndarray, np.ndarray]:
        if self.rng is None:
            chunk = policy.mean_action(self.params, obs)
            return chunk, np.zeros(len(chunk))

        return policy.sample(self.params, obs, self.rng)


def run_episode(
    env: PlanarReachEnv, controller: Controller, episode_seed: int
) -> Rollout:
    """
    Play `controller` in `env` for one full episode.
    """
    obs = env.reset(episode_seed)
    controller.reset(obs)

    done = False
    while not done:
        chunk, logps = controller(obs)
        obs, done = env.step_chunk(chunk, logps)

    return env.finalize()


@dataclass(frozen=True)
class DemoSet:
    """
    Behavior-cloning data: one (observation, action chunk) pair per query.
    """

    observations: List[Observation]
    chunks: np.ndarray
    rollouts: List[Rollout]

    def __len__(self) -> int:
        return len(self.observations)

    @classmethod
    def from_rollouts(cls, rollouts: Sequence[Rollout], chunk_size: int) -> "DemoSet":
        """
        Rebuild the pairs from stored rollouts; slots cut off by the
        horizon are filled with zeros (the scripted controller holds still).
        """
        observations: List[Observation] = []
        chunks: List[np.ndarray] = []

        for rollout in rollouts:
            dof = rollout.actions.shape[1]
            padded = np.zeros((len(rollout.observations), chunk_size, dof))
            padded[rollout.chunk_index, rollout.chunk_slot] = rollout.actions

            observations.extend(rollout.observations)
            chunks.extend(chunk.ravel() for chunk in padded)

        dim = chunk_size * rollouts[0].actions.shape[1] if rollouts else 0
        return cls(observations, np.array(chunks).reshape(-1, dim), list(rollouts))

    @property
    def success_rate(self) -> float:
        if not self.rollouts:
            return float("nan")
        return float(np.mean([r.success for r in self.rollouts]))

    @property
    def mean_jerk(self) -> float:
        if not self.rollouts:
            return float("nan")
        return float(np.mean([r.smoothness.mean_jerk_norm for r in self.rollouts]))


def collect_demonstrations(
    config: EnvConfig,
    episode_seeds: Sequence[int],
    mode: str = "joint",
    speed_margin: float = 0.9,
    derivative_method: str = "analytic",
) -> DemoSet:
    """
    Roll out the scripted controller and record its (observation, chunk) pairs.

    Parameters
    ----------
    config: EnvConfig
        The task.
    episode_seeds: Sequence[int]
        One episode per seed (may be empty).
    mode: str
        The scripted planner mode.
    speed_margin: float
        The fraction of action_scale a single step may use.
    derivative_method: str
        How J' and J'' are computed for the smoothness reports.

    Returns
    -------
    demos: DemoSet
    """
    if len(episode_seeds) == 0:
        logger.warning("No demonstration episodes were requested.")

    env = PlanarReachEnv(config, derivative_method)
    controller = ScriptedController(config, mode, speed_margin)

    observations: List[Observation] = []
    chunks: List[np.ndarray] = []
    rollouts: List[Rollout] = []

    for seed in episode_seeds:

        obs = env.reset(seed)
        controller.reset(obs)

        done = False
        while not done:
            chunk, logps = controller(obs)
            observations.append(obs)
            chunks.append(chunk.ravel())
            obs, done = env.step_chunk(chunk, logps)

        rollouts.append(env.finalize())

    demos = DemoSet(
        observations=observations,
        chunks=np.array(chunks).reshape(-1, config.act_dim),
        rollouts=rollouts,
    )

    if rollouts:
        logger.info(
            f"Collected {len(rollouts)} demonstrations: success rate "
            f"{demos.success_rate:.3f}, mean jerk {demos.mean_jerk:.4f}"
        )

    return demos
