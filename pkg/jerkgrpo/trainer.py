"""
Behavior cloning followed by group-relative policy optimization.

The GRPO stage samples a group of rollouts on one task, scores each
with the hybrid reward, normalizes the rewards within the group and
takes clipped-surrogate gradient steps with a KL penalty toward the
post-BC reference policy. There is no critic.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, Callable, ClassVar, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import policy
from .demos import Controller, DemoSet, PolicyController, run_episode
from .env import EnvConfig, PlanarReachEnv, Rollout
from .errors import ContractViolation, NumericalFailure
from .policy import AdamState, PolicyConfig, PolicyParams, ReferencePolicy
from .utils import derive_rng, episode_seeds

__all__ = [
    "REWARD_MODES",
    "RATIO_MODES",
    "RewardConfig",
    "GrpoConfig",
    "BcConfig",
    "GroupBatch",
    "GrpoLogRow",
    "EvalResult",
    "hybrid_reward",
    "group_advantages",
    "clipped_surrogate",
    "grpo_loss",
    "bc_train",
    "collect_group",
    "grpo_train",
    "evaluation_rollouts",
    "evaluate",
]

logger = logging.getLogger(__name__)

REWARD_MODES = ("binary", "random", "smooth")
RATIO_MODES = ("per_step", "trajectory")

# stream keys next to the (seed, batch, member) rollout streams
_TASK_STREAM = -1
_REWARD_STREAM = -2


@dataclass(frozen=True)
class RewardConfig:
    """
    The reward used for GRPO and its ablations.
    """

    mode: str = "smooth"

    # the weight of the average-jerk penalty
    lam: float = 0.2

    # the half-width of the uniform noise of the "random" mode
    noise_halfwidth: float = 0.1

    def __post_init__(self) -> None:
        if self.mode not in REWARD_MODES:
            raise ContractViolation(
                f"Unknown reward mode '{self.mode}'; use {REWARD_MODES}."
            )
        if not self.lam >= 0:
            raise ContractViolation(f"lam must be >= 0, got {self.lam}.")
        if self.mode == "random" and not self.noise_halfwidth > 0:
            raise ContractViolation("noise_halfwidth must be > 0 in random mode.")


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 8
    clip_eps: float = 0.2
    kl_beta: float = 0.01
    learning_rate: float = 3e-4
    epochs_per_batch: int = 4
    batches: int = 60
    std_floor: float = 1e-8
    seed: int = 0

    # the number of threads collecting the rollouts of a group
    workers: int = 1

    # "per_step" clips each step's ratio, "trajectory" the product ratio
    ratio_mode: str = "per_step"

    max_grad_norm: Optional[float] = None

    # record elapsed time in the log (breaks byte-identical logs)
    log_wall_time: bool = False

    def __post_init__(self) -> None:
        if self.group_size < 2:
            raise ContractViolation(f"group_size must be >= 2, got {self.group_size}.")
        if not 0.0 < self.clip_eps < 1.0:
            raise ContractViolation(
                f"clip_eps must lie in (0, 1), got {self.clip_eps}."
            )
        if not self.kl_beta >= 0:
            raise ContractViolation(f"kl_beta must be >= 0, got {self.kl_beta}.")
        if not self.std_floor > 0:
            raise ContractViolation(f"std_floor must be > 0, got {self.std_floor}.")
        if self.learning_rate <= 0 or self.epochs_per_batch < 1 or self.batches < 0:
            raise ContractViolation(
                "learning_rate, epochs_per_batch and batches are invalid."
            )
        if self.workers < 1:
            raise ContractViolation(f"workers must be >= 1, got {self.workers}.")
        if self.ratio_mode not in RATIO_MODES:
            raise ContractViolation(
                f"Unknown ratio mode '{self.ratio_mode}'; use {RATIO_MODES}."
            )


@dataclass(frozen=True)
class BcConfig:
    learning_rate: float = 1e-3
    iterations: int = 1500
    batch_size: int = 256
    n_demos: int = 200
    seed: int = 0

    # log the loss every `log_every` iterations
    log_every: int = 100

    max_grad_norm: Optional[float] = None

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.iterations < 0 or self.batch_size < 1:
            raise ContractViolation(
                "learning_rate, iterations and batch_size are invalid."
            )
        if self.n_demos < 0 or self.log_every < 1:
            raise ContractViolation("n_demos must be >= 0 and log_every >= 1.")


@dataclass(frozen=True)
class GroupBatch:
    """
    G rollouts of one task with their rewards and group advantages.
    """

    task_seed: int
    rollouts: List[Rollout]
    rewards: np.ndarray
    advantages: np.ndarray

    def __post_init__(self) -> None:
        G = len(self.rollouts)

        if G == 0:
            raise ContractViolation("A group needs at least one rollout.")

        if np.shape(self.rewards) != (G,) or np.shape(self.advantages) != (G,):
            raise ContractViolation(
                "Need exactly one reward and advantage per rollout."
            )

        goal = self.rollouts[0].goal
        if any(not np.array_equal(r.goal, goal) for r in self.rollouts):
            raise ContractViolation("All rollouts of a group must share the same goal.")


@dataclass(frozen=True)
class GrpoLogRow:
    """
    One GRPO batch in the training log.
    """

    batch: int
    mean_reward: float
    success_rate: float
    mean_jerk: float
    kl: float
    clip_frac: float
    wall_ms: int

    COLUMNS: ClassVar[Tuple[str, ...]] = (
        "batch",
        "mean_reward",
        "success_rate",
        "mean_jerk",
        "kl",
        "clip_frac",
        "wall_ms",
    )

    def as_row(self) -> List[str]:
        return [
            str(self.batch),
            repr(self.mean_reward),
            repr(self.success_rate),
            repr(self.mean_jerk),
            repr(self.kl),
            repr(self.clip_frac),
            str(self.wall_ms),
        ]

    @classmethod
    def from_row(cls, row: Sequence[str]) -> "GrpoLogRow":
        return cls(
            int(row[0]),
            float(row[1]),
            float(row[2]),
            float(row[3]),
            float(row[4]),
            float(row[5]),
            int(row[6]),
        )


@dataclass(frozen=True)
class EvalResult:
    """
    Success and smoothness of a controller over a set of episodes.

    `peak_jerk` is the mean over episodes of each episode's peak jerk.
    """

    success_rate: float
    mean_jerk: float
    peak_jerk: float
    n_episodes: int

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_rollouts(cls, rollouts: Sequence[Rollout]) -> "EvalResult":
        if not rollouts:
            raise ContractViolation("Need at least one rollout to summarize.")
        return cls(
            success_rate=float(np.mean([r.success for r in rollouts])),
            mean_jerk=float(np.mean([r.smoothness.mean_jerk_norm for r in rollouts])),
            peak_jerk=float(np.mean([r.smoothness.peak_jerk_norm for r in rollouts])),
            n_episodes=len(rollouts),
        )


def hybrid_reward(
    rollout: Rollout, config: RewardConfig, rng: Optional[np.random.Generator] = None
) -> float:
    """
    The trajectory reward of a finished rollout.

    - smooth: I_success * (1 - lam * mean_jerk_norm), unclamped.
    - binary: I_success.
    - random: I_success + U(-noise_halfwidth, noise_halfwidth).

    Parameters
    ----------
    rollout: Rollout
        A finalized episode.
    config: RewardConfig
        The reward mode and weights.
    rng: np.random.Generator, optional
        The noise stream (required for the random mode).

    Returns
    -------
    reward: float
    """
    success = 1.0 if rollout.success else 0.0

    if config.mode == "binary":
        return success

    if config.mode == "random":
        if rng is None:
            raise ContractViolation("The random reward mode needs an rng.")
        width = config.noise_halfwidth
        return success + float(rng.uniform(-width, width))

    return success * (1.0 - config.lam * rollout.smoothness.mean_jerk_norm)


def group_advantages(rewards: Sequence[float], std_floor: float = 1e-8) -> np.ndarray:
    """
    Normalize rewards within a group: (R - mean) / std with the population std.

    If the std is below `std_floor` every advantage is zero.
    """
    rewards = np.asarray(rewards, dtype=float)

    if rewards.ndim != 1 or rewards.size < 2:
        raise ContractViolation(
            f"Need a group of at least 2 rewards, got {rewards.shape}."
        )

    std = float(np.std(rewards))

    if std < std_floor:
        return np.zeros_like(rewards)

    return (rewards - np.mean(rewards)) / std


def clipped_surrogate(
    ratio: np.ndarray, advantage: np.ndarray, clip_eps: float
) -> Tuple[np.ndarray, np.ndarray]:
    """
    The pessimistic clipped objective min(r A, clip(r, 1-eps, 1+eps) A).

    Returns
    -------
    value: np.ndarray
        The objective per element.
    slope: np.ndarray
        d(value)/d(ratio): A where the unclipped branch is active, else 0.
    """
    ratio = np.asarray(ratio, dtype=float)
    advantage = np.asarray(advantage, dtype=float)

    unclipped = ratio * advantage
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantage

    active = unclipped <= clipped

    return np.where(active, unclipped, clipped), np.where(active, advantage, 0.0)


@dataclass(frozen=True)
class _StepTable:
    """
    Every executed step of a group, flattened for the network.
    """

    X: np.ndarray
    actions: np.ndarray
    mask: np.ndarray
    member: np.ndarray
    excluded: int

    # every query observation of the group, one per chunk
    queries: np.ndarray


def _step_table(params: PolicyParams, rollouts: Sequence[Rollout]) -> _StepTable:
    """
    One row per executed step: its query observation and its action placed
    in that step's chunk slot. Steps whose action is at the squash boundary
    are left out of the rows but their query observations are kept for
    the KL term.
    """
    act_dim = params.act_dim
    X, actions, mask, member = [], [], [], []
    queries: List[np.ndarray] = []
    excluded = 0

    for i, rollout in enumerate(rollouts):

        dof = rollout.actions.shape[1]
        features = [obs.features() for obs in rollout.observations]
        queries.extend(features)

        for t, action in enumerate(rollout.actions):

            if np.any(policy.is_boundary(params, action)):
                excluded += 1
                continue

            slot = int(rollout.chunk_slot[t])
            row = np.zeros(act_dim)
            row[slot * dof : (slot + 1) * dof] = action
            sel = np.zeros(act_dim, dtype=bool)
            sel[slot * dof : (slot + 1) * dof] = True

            X.append(features[rollout.chunk_index[t]])
            actions.append(row)
            mask.append(sel)
            member.append(i)

    if not X:
        raise ContractViolation("The group has no usable steps.")

    return _StepTable(
        X=np.array(X),
        actions=np.array(actions),
        mask=np.array(mask),
        member=np.array(member, dtype=int),
        excluded=excluded,
        queries=np.array(queries),
    )


def _grpo_terms(
    params: PolicyParams,
    old_params: PolicyParams,
    ref: ReferencePolicy,
    batch: GroupBatch,
    config: GrpoConfig,
) -> Dict[str, Any]:
    """
    The loss, its gradient and the diagnostics of one GRPO step.
    """
    table = _step_table(params, batch.rollouts)
    G = len(batch.rollouts)

    logp = policy.masked_logp(params, table.X, table.actions, table.mask)
    logp_old = policy.masked_logp(old_params, table.X, table.actions, table.mask)

    # the number of usable steps of each member
    counts = np.bincount(table.member, minlength=G)

    if config.ratio_mode == "per_step":
        ratio = np.exp(logp - logp_old)
        advantage = batch.advantages[table.member]
        value, slope = clipped_surrogate(ratio, advantage, config.clip_eps)

        # average over steps, then over the group
        step_weight = 1.0 / (G * counts[table.member])
        surrogate = float(np.sum(step_weight * value))

        # d(objective)/d(logp) = weight * slope * ratio
        weights = step_weight * slope * ratio
        clip_frac = float(np.mean(np.abs(ratio - 1.0) > config.clip_eps))

    else:
        log_ratio = np.bincount(table.member, weights=logp - logp_old, minlength=G)
        ratio = np.exp(log_ratio)
        value, slope = clipped_surrogate(ratio, batch.advantages, config.clip_eps)

        surrogate = float(np.sum(value[counts > 0]) / G)
        weights = (slope * ratio)[table.member] / G
        clip_frac = float(np.mean(np.abs(ratio[counts > 0] - 1.0) > config.clip_eps))

    if not np.all(np.isfinite(ratio)):
        raise NumericalFailure(
            "Numerical failure: non-finite importance ratio.", params
        )

    grad_surrogate = policy.masked_logp_grad(
        params, table.X, table.actions, table.mask, weights
    )
    kl, grad_kl = policy.kl_divergence_and_grad(params, ref, table.queries)

    loss = -surrogate + config.kl_beta * kl
    grad = -grad_surrogate + config.kl_beta * grad_kl

    if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
        raise NumericalFailure("Numerical failure: non-finite GRPO loss.", params)

    return {
        "loss": float(loss),
        "grad": grad,
        "surrogate": surrogate,
        "kl": kl,
        "clip_frac": clip_frac,
        "excluded": table.excluded,
    }


def grpo_loss(
    params: PolicyParams,
    old_params: PolicyParams,
    ref: ReferencePolicy,
    batch: GroupBatch,
    config: GrpoConfig,
) -> Tuple[float, np.ndarray]:
    """
    The clipped group-relative surrogate loss with KL penalty.

    Each step's ratio exp(logp - logp_old) is clipped with the advantage
    of its trajectory; the objective is averaged over steps, then over the
    group, and loss = -objective + kl_beta * KL(params || ref) where the
    KL is the mean full-chunk divergence over the query observations of
    the group. Steps at the squash boundary are excluded from the
    objective.

    Parameters
    ----------
    params: PolicyParams
        The parameters being optimized.
    old_params: PolicyParams
        The snapshot that sampled `batch`.
    ref: ReferencePolicy
        The KL anchor.
    batch: GroupBatch
        The group with its advantages.
    config: GrpoConfig
        clip_eps, kl_beta and ratio_mode are used.

    Returns
    -------
    loss: float
    grad: np.ndarray
        d(loss)/d(params) in the layout of `params.flat()`.
    """
    terms = _grpo_terms(params, old_params, ref, batch, config)
    return terms["loss"], terms["grad"]


Demos = Union[DemoSet, Sequence[Tuple[Any, np.ndarray]]]


def _demo_arrays(demos: Demos) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(demos, DemoSet):
        observations, chunks = demos.observations, demos.chunks
    else:
        observations = [obs for obs, _ in demos]
        chunks = [np.ravel(chunk) for _, chunk in demos]

    if len(observations) == 0:
        raise ContractViolation("Behavior cloning needs at least one demonstration.")

    X = np.stack([obs.features() for obs in observations])
    return X, np.array(chunks, dtype=float)


def bc_train(
    demos: Demos,
    env_config: EnvConfig,
    config: Optional[BcConfig] = None,
    policy_config: Optional[PolicyConfig] = None,
    init: Optional[PolicyParams] = None,
) -> Tuple[PolicyParams, np.ndarray]:
    """
    Fit the policy to demonstrations by maximizing their mean log-density.

    Parameters
    ----------
    demos: DemoSet or sequence of (Observation, chunk) pairs
        The demonstrations (must not be empty).
    env_config: EnvConfig
        Fixes the input/output sizes and the action scale.
    config: BcConfig, optional
        The optimizer settings.
    policy_config: PolicyConfig, optional
        The architecture of a freshly initialized policy.
    init: PolicyParams, optional
        Start from these parameters instead.

    Returns
    -------
    params: PolicyParams
        The trained parameters.
    losses: np.ndarray
        The minibatch loss before every update.

    Raises
    ------
    NumericalFailure:
        If the loss diverges; carries the last finite parameters.
    """
    config = config if config is not None else BcConfig()
    X, chunks = _demo_arrays(demos)

    params = (
        init
        if init is not None
        else policy.init_params(
            env_config.obs_dim,
            env_config.act_dim,
            env_config.action_scale,
            policy_config,
        )
    )

    if X.shape[1] != params.obs_dim or chunks.shape[1] != params.act_dim:
        raise ContractViolation(
            f"Demonstrations {X.shape[1]}->{chunks.shape[1]} do not match the policy "
            f"{params.obs_dim}->{params.act_dim}."
        )

    rng = derive_rng(config.seed)
    adam = AdamState.zeros(params.size)
    full = np.ones_like(chunks, dtype=bool)
    nrows = X.shape[0]
    losses = np.zeros(config.iterations)

    for it in range(config.iterations):

        if config.batch_size >= nrows:
            rows = np.arange(nrows)
        else:
            rows = rng.choice(nrows, size=config.batch_size, replace=False)

        logp = policy.masked_logp(params, X[rows], chunks[rows], full[rows])
        loss = -float(np.mean(logp))

        if not np.isfinite(loss):
            raise NumericalFailure(
                f"Numerical failure: BC loss diverged at iteration {it}.", params
            )

        # ascend the mean log-density
        grad = -policy.masked_logp_grad(
            params,
            X[rows],
            chunks[rows],
            full[rows],
            np.full(len(rows), 1.0 / len(rows)),
        )
        params, adam = policy.adam_step(
            params, grad, adam, config.learning_rate, config.max_grad_norm
        )
        losses[it] = loss

        if (it + 1) % config.log_every == 0:
            logger.info(f"BC iteration {it + 1}/{config.iterations}: loss {loss:.5f}")

    return params, losses


def collect_group(
    params: PolicyParams,
    env_config: EnvConfig,
    task_seed: int,
    group_size: int,
    seed: int,
    batch_index: int,
    workers: int = 1,
    derivative_method: str = "analytic",
) -> List[Rollout]:
    """
    Sample `group_size` rollouts of the same task with the frozen `params`.

    Member m draws its actions from the stream (seed, batch_index, m), so
    the result does not depend on `workers`; rollouts come back in member
    order.
    """

    def member(index: int) -> Rollout:
        env = PlanarReachEnv(env_config, derivative_method)
        controller = PolicyController(params, derive_rng(seed, batch_index, index))
        return run_episode(env, controller, task_seed)

    if workers == 1:
        return [member(m) for m in range(group_size)]

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(member, range(group_size)))


def grpo_train(
    init: PolicyParams,
    env_config: EnvConfig,
    config: Optional[GrpoConfig] = None,
    reward_config: Optional[RewardConfig] = None,
    ref: Optional[ReferencePolicy] = None,
    derivative_method: str = "analytic",
    on_batch: Optional[Callable[[GrpoLogRow, PolicyParams], None]] = None,
) -> Tuple[PolicyParams, List[GrpoLogRow]]:
    """
    Fine-tune `init` with group-relative policy optimization.

    Every batch samples a task, collects a group with the current snapshot,
    scores and normalizes the rewards and runs `epochs_per_batch` Adam steps
    on `grpo_loss`.

    Parameters
    ----------
    init: PolicyParams
        The starting policy (normally from `bc_train`).
    env_config: EnvConfig
        The task.
    config: GrpoConfig, optional
        The optimizer settings.
    reward_config: RewardConfig, optional
        The reward mode.
    ref: ReferencePolicy, optional
        The KL anchor (default: a frozen copy of `init`).
    derivative_method: str
        How J' and J'' are computed for the smoothness reports.
    on_batch: callable, optional
        Called with every log row and the updated parameters.

    Returns
    -------
    params: PolicyParams
        The fine-tuned parameters.
    log: List[GrpoLogRow]
        One row per batch.

    Raises
    ------
    NumericalFailure:
        Carrying the last finite parameters.
    """
    config = config if config is not None else GrpoConfig()
    reward_config = reward_config if reward_config is not None else RewardConfig()
    ref = ref if ref is not None else ReferencePolicy.freeze(init)

    params = init
    adam = AdamState.zeros(params.size)
    log: List[GrpoLogRow] = []

    for b in range(config.batches):

        start = time.perf_counter()
        task_seed = int(derive_rng(config.seed, b, _TASK_STREAM).integers(0, 2**31 - 1))

        old_params = params
        rollouts = collect_group(
            old_params,
            env_config,
            task_seed,
            config.group_size,
            config.seed,
            b,
            config.workers,
            derivative_method,
        )

        reward_rng = derive_rng(config.seed, b, _REWARD_STREAM)
        rewards = np.array(
            [hybrid_reward(r, reward_config, reward_rng) for r in rollouts]
        )
        advantages = group_advantages(rewards, config.std_floor)

        if not np.any(advantages):
            logger.warning(f"Batch {b}: degenerate group, all advantages are zero.")

        batch = GroupBatch(task_seed, rollouts, rewards, advantages)

        try:
            for _ in range(config.epochs_per_batch):
                terms = _grpo_terms(params, old_params, ref, batch, config)
                params, adam = policy.adam_step(
                    params,
                    terms["grad"],
                    adam,
                    config.learning_rate,
                    config.max_grad_norm,
                )
        except NumericalFailure as err:
            raise NumericalFailure(f"{err} (batch {b})", params) from err

        if terms["excluded"]:
            logger.warning(
                f"Batch {b}: excluded {terms['excluded']} boundary-action steps."
            )

        wall_ms = 0
        if config.log_wall_time:
            wall_ms = int(round(1e3 * (time.perf_counter() - start)))

        row = GrpoLogRow(
            batch=b,
            mean_reward=float(np.mean(rewards)),
            success_rate=float(np.mean([r.success for r in rollouts])),
            mean_jerk=float(np.mean([r.smoothness.mean_jerk_norm for r in rollouts])),
            kl=float(terms["kl"]),
            clip_frac=float(terms["clip_frac"]),
            wall_ms=wall_ms,
        )
        log.append(row)

        logger.info(
            f"GRPO batch {b + 1}/{config.batches}: reward {row.mean_reward:.4f} "
            f"success {row.success_rate:.3f} jerk {row.mean_jerk:.4f} kl {row.kl:.5f}"
        )

        if on_batch is not None:
            on_batch(row, params)

    return params, log


def evaluation_rollouts(
    actor: Union[PolicyParams, Controller],
    env_config: EnvConfig,
    n_episodes: int,
    seed: int = 0,
    derivative_method: str = "analytic",
) -> List[Rollout]:
    """
    Run `n_episodes` episodes with the tasks of `episode_seeds(seed, n)`.

    A PolicyParams acts with its deterministic mean action.
    """
    if n_episodes < 1:
        raise ContractViolation(f"Need at least one episode, got {n_episodes}.")

    controller = PolicyController(actor) if isinstance(actor, PolicyParams) else actor
    env = PlanarReachEnv(env_config, derivative_method)

    seeds = episode_seeds(seed, n_episodes)
    return [run_episode(env, controller, int(s)) for s in seeds]


def evaluate(
    actor: Union[PolicyParams, Controller],
    env_config: EnvConfig,
    n_episodes: int,
    seed: int = 0,
    derivative_method: str = "analytic",
) -> EvalResult:
    """
    Run `n_episodes` episodes and summarize success and smoothness.
    """
    rollouts = evaluation_rollouts(
        actor, env_config, n_episodes, seed, derivative_method
    )
    return EvalResult.from_rollouts(rollouts)
