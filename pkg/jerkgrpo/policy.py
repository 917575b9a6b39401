"""
A squashed diagonal-Gaussian policy over action chunks.

The policy is a tanh MLP mapping an observation to the mean of a
Gaussian over pre-squash actions u; the emitted action is
action_scale * tanh(u). The log-density of an action includes the
change-of-variables correction of the squash. Gradients are computed by
hand-written backpropagation, so everything here is plain numpy.

Parameters are immutable snapshots: every update returns a new
`PolicyParams`.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .env import Observation
from .errors import BoundaryAction, ContractViolation, NumericalFailure

__all__ = [
    "PolicyConfig",
    "PolicyParams",
    "ReferencePolicy",
    "AdamState",
    "init_params",
    "act",
    "sample",
    "mean_action",
    "logp",
    "logp_steps",
    "grad_logp",
    "kl_divergence",
    "kl_divergence_and_grad",
    "masked_logp",
    "masked_logp_grad",
    "masked_kl",
    "is_boundary",
    "adam_step",
]

logger = logging.getLogger(__name__)

# log_std is clamped into this interval after every update
LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0

# sampled pre-squash actions are clipped so tanh never saturates to +/-1
PRE_SQUASH_LIMIT = 7.5

_LOG_2PI = math.log(2.0 * math.pi)

ObsLike = Union[Observation, Sequence[Observation], np.ndarray]


@dataclass(frozen=True)
class PolicyConfig:
    """
    The network architecture and initialization.
    """

    hidden: Tuple[int, ...] = (64, 64)
    log_std_init: float = -0.5
    output_gain: float = 0.01
    init_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

        if any(h < 1 for h in self.hidden):
            raise ContractViolation(f"Hidden widths must be >= 1, got {self.hidden}.")

        if not LOG_STD_MIN <= self.log_std_init <= LOG_STD_MAX:
            raise ContractViolation(
                f"log_std_init must lie in [{LOG_STD_MIN}, {LOG_STD_MAX}]."
            )


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class PolicyParams:
    """
    The weights of the policy network plus the state-independent log_std.

    Layer l maps its input with weights[l] of shape (out, in) and
    biases[l] of shape (out,); all but the last layer apply tanh.
    """

    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    log_std: np.ndarray
    action_scale: float

    def __post_init__(self) -> None:

        weights = tuple(_frozen(W) for W in self.weights)
        biases = tuple(_frozen(b) for b in self.biases)
        log_std = _frozen(np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX))

        if len(weights) == 0 or len(weights) != len(biases):
            raise ContractViolation("Need one bias vector per weight matrix.")

        for l, (W, b) in enumerate(zip(weights, biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ContractViolation(f"Layer {l} has inconsistent shapes.")
            if l > 0 and W.shape[1] != weights[l - 1].shape[0]:
                raise ContractViolation(f"Layer {l} does not match layer {l - 1}.")

        if log_std.shape != (weights[-1].shape[0],):
            raise ContractViolation("log_std must have one entry per action dimension.")

        if not self.action_scale > 0:
            raise ContractViolation("action_scale must be positive.")

        if not all(np.all(np.isfinite(t)) for t in (*weights, *biases, log_std)):
            raise NumericalFailure("Numerical failure: non-finite policy parameters.")

        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)
        object.__setattr__(self, "log_std", log_std)
        object.__setattr__(self, "action_scale", float(self.action_scale))

    @property
    def obs_dim(self) -> int:
        return int(self.weights[0].shape[1])

    @property
    def act_dim(self) -> int:
        return int(self.weights[-1].shape[0])

    @property
    def hidden(self) -> Tuple[int, ...]:
        return tuple(int(W.shape[0]) for W in self.weights[:-1])

    def tensors(self) -> List[Tuple[str, np.ndarray]]:
        """
        Every tensor with its name, in the order used by `flat`.
        """
        named = []
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            named.append((f"W{l}", W))
            named.append((f"b{l}", b))
        named.append(("log_std", self.log_std))
        return named

    @property
    def size(self) -> int:
        return sum(t.size for _, t in self.tensors())

    def flat(self) -> np.ndarray:
        """
        All parameters as one vector.
        """
        return np.concatenate([t.ravel() for _, t in self.tensors()])

    def with_flat(self, vector: np.ndarray) -> "PolicyParams":
        """
        A new snapshot with parameters taken from `vector` (log_std clamped).
        """
        vector = np.asarray(vector, dtype=float)

        if vector.shape != (self.size,):
            raise ContractViolation(
                f"Expected a vector of {self.size} parameters, got {vector.shape}."
            )

        tensors = []
        offset = 0
        for _, t in self.tensors():
            tensors.append(vector[offset : offset + t.size].reshape(t.shape))
            offset += t.size

        nlayers = len(self.weights)
        return PolicyParams(
            weights=tuple(tensors[0 : 2 * nlayers : 2]),
            biases=tuple(tensors[1 : 2 * nlayers : 2]),
            log_std=tensors[-1],
            action_scale=self.action_scale,
        )


@dataclass(frozen=True)
class ReferencePolicy:
    """
    A frozen snapshot anchoring the KL penalty.
    """

    params: PolicyParams

    @classmethod
    def freeze(cls, params: PolicyParams) -> "ReferencePolicy":
        # PolicyParams are already read-only; copying the vector makes the
        # snapshot independent of any later buffer reuse
        return cls(params.with_flat(params.flat().copy()))


@dataclass
class AdamState:
    """
    First/second moment estimates of the Adam optimiser.
    """

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size))


def _orthogonal(
    rng: np.random.Generator, rows: int, cols: int, gain: float
) -> np.ndarray:
    """
    A (rows, cols) matrix with orthonormal rows or columns, scaled by `gain`.
    """
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)

    # fix the sign ambiguity of QR so the draw is uniform
    q = q * np.sign(np.diag(r))

    if rows < cols:
        q = q.T

    return gain * q[:rows, :cols]


def init_params(
    obs_dim: int,
    act_dim: int,
    action_scale: float,
    config: Optional[PolicyConfig] = None,
    rng: Optional[np.random.Generator] = None,
) -> PolicyParams:
    """
    Create freshly initialized policy parameters.

    Weights are orthogonal (gain 1 for hidden layers, `output_gain` for
    the mean head), biases are zero and log_std is `log_std_init`.

    Parameters
    ----------
    obs_dim: int
        The observation feature length.
    act_dim: int
        The flattened action-chunk length (dof * chunk_size).
    action_scale: float
        The half-width of the squashed action range.
    config: PolicyConfig, optional
        The architecture (default `PolicyConfig()`).
    rng: np.random.Generator, optional
        The stream to draw weights from (default: seeded by `config.init_seed`).

    Returns
    -------
    params: PolicyParams
    """
    config = config if config is not None else PolicyConfig()
    rng = rng if rng is not None else np.random.default_rng(config.init_seed)

    sizes = (obs_dim, *config.hidden, act_dim)
    nlayers = len(sizes) - 1

    weights = []
    biases = []
    for l in range(nlayers):
        gain = config.output_gain if l == nlayers - 1 else 1.0
        weights.append(_orthogonal(rng, sizes[l + 1], sizes[l], gain))
        biases.append(np.zeros(sizes[l + 1]))

    return PolicyParams(
        weights=tuple(weights),
        biases=tuple(biases),
        log_std=np.full(act_dim, config.log_std_init),
        action_scale=action_scale,
    )


def _features(params: PolicyParams, obs: ObsLike) -> np.ndarray:
    """
    Stack observations into a (B, obs_dim) feature matrix.
    """
    if isinstance(obs, Observation):
        X = obs.features()[None, :]
    elif isinstance(obs, np.ndarray):
        X = np.atleast_2d(np.asarray(obs, dtype=float))
    else:
        X = np.stack([o.features() for o in obs])

    if X.ndim != 2 or X.shape[1] != params.obs_dim:
        raise ContractViolation(
            f"Observation features have shape {X.shape}; the network expects "
            f"{params.obs_dim} inputs."
        )

    return X


def _forward(
    params: PolicyParams, X: np.ndarray
) -> Tuple[np.ndarray, List[np.ndarray]]:
    """
    The mean head for every row of X and the layer inputs for backprop.
    """
    inputs = [X]
    h = X

    for W, b in zip(params.weights[:-1], params.biases[:-1]):
        h = np.tanh(h @ W.T + b)
        inputs.append(h)

    mean = h @ params.weights[-1].T + params.biases[-1]

    if not np.all(np.isfinite(mean)):
        raise NumericalFailure("Numerical failure: non-finite policy output.")

    return mean, inputs


def _backward(
    params: PolicyParams,
    inputs: List[np.ndarray],
    g_mean: np.ndarray,
    g_log_std: np.ndarray,
) -> np.ndarray:
    """
    Backpropagate d(objective)/d(mean) into a flat gradient (same layout as `flat`).
    """
    nlayers = len(params.weights)
    g_weights: List[np.ndarray] = [np.empty(0)] * nlayers
    g_biases: List[np.ndarray] = [np.empty(0)] * nlayers

    g = g_mean
    for l in reversed(range(nlayers)):
        g_weights[l] = g.T @ inputs[l]
        g_biases[l] = g.sum(axis=0)

        # through the tanh of the previous layer: tanh' = 1 - tanh^2
        if l > 0:
            g = (g @ params.weights[l]) * (1.0 - inputs[l] ** 2)

    parts = []
    for gW, gb in zip(g_weights, g_biases):
        parts.append(gW.ravel())
        parts.append(gb.ravel())
    parts.append(np.asarray(g_log_std, dtype=float).ravel())

    return np.concatenate(parts)


def is_boundary(params: PolicyParams, actions: np.ndarray) -> np.ndarray:
    """
    True (per action entry) where the action is at or outside the squash range.
    """
    return np.abs(np.asarray(actions, dtype=float) / params.action_scale) >= 1.0


def _unsquash(
    params: PolicyParams, actions: np.ndarray, mask: np.ndarray
) -> np.ndarray:
    """
    The pre-squash value u = atanh(a / scale) of every masked entry.
    """
    y = np.asarray(actions, dtype=float) / params.action_scale

    if np.any(is_boundary(params, actions) & mask):
        raise BoundaryAction("Boundary action: |a| must be < action_scale.")

    # unmasked entries are irrelevant; keep them finite
    return np.arctanh(np.where(mask, y, 0.0))


def _log_squash_jacobian(u: np.ndarray, scale: float) -> np.ndarray:
    """
    log |da/du| for a = scale * tanh(u), computed without cancellation.
    """
    return math.log(scale) + 2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


def _chunk_matrix(params: PolicyParams, action: np.ndarray, nrows: int) -> np.ndarray:
    actions = np.asarray(action, dtype=float).reshape(nrows, -1)
    if actions.shape[1] != params.act_dim:
        raise ContractViolation(
            f"Action chunk has {actions.shape[1]} entries, expected {params.act_dim}."
        )
    return actions


def masked_logp(
    params: PolicyParams, X: np.ndarray, actions: np.ndarray, mask: np.ndarray
) -> np.ndarray:
    """
    The log-density of the masked entries of each row.

    Parameters
    ----------
    params: PolicyParams
        The policy.
    X: np.ndarray
        (B, obs_dim) observation features.
    actions: np.ndarray
        (B, act_dim) squashed actions (unmasked entries are ignored).
    mask: np.ndarray
        (B, act_dim) boolean selection of the dimensions to score.

    Returns
    -------
    logp: np.ndarray
        (B,) log-densities.
    """
    mask = np.asarray(mask, dtype=bool)
    mean, _ = _forward(params, X)
    u = _unsquash(params, actions, mask)

    std = np.exp(params.log_std)
    z = (u - mean) / std

    per_dim = (
        -0.5 * z**2
        - params.log_std
        - 0.5 * _LOG_2PI
        - _log_squash_jacobian(u, params.action_scale)
    )

    return np.sum(np.where(mask, per_dim, 0.0), axis=-1)


def masked_logp_grad(
    params: PolicyParams,
    X: np.ndarray,
    actions: np.ndarray,
    mask: np.ndarray,
    weights: np.ndarray,
) -> np.ndarray:
    """
    The gradient of sum_i weights[i] * masked_logp(...)[i] w.r.t. every parameter.

    The squash correction does not depend on the parameters (u is fixed
    by the action), so only the Gaussian term contributes.
    """
    mask = np.asarray(mask, dtype=bool)
    weights = np.asarray(weights, dtype=float)

    mean, inputs = _forward(params, X)
    u = _unsquash(params, actions, mask)

    std = np.exp(params.log_std)
    z = (u - mean) / std

    # d logp / d mean = z / std ; d logp / d log_std = z^2 - 1
    g_mean = np.where(mask, z / std, 0.0) * weights[:, None]
    g_log_std = np.sum(np.where(mask, z**2 - 1.0, 0.0) * weights[:, None], axis=0)

    return _backward(params, inputs, g_mean, g_log_std)


def masked_kl(
    params: PolicyParams, ref: ReferencePolicy, X: np.ndarray, mask: np.ndarray
) -> Tuple[float, np.ndarray]:
    """
    Mean over rows of KL(pi_params || pi_ref) restricted to the masked dimensions.

    The divergence is the closed form between the pre-squash Gaussians.

    Returns
    -------
    kl: float
        The mean divergence.
    grad: np.ndarray
        Its gradient w.r.t. `params` (flat layout).
    """
    mask = np.asarray(mask, dtype=bool)
    nrows = X.shape[0]

    mean, inputs = _forward(params, X)
    ref_mean, _ = _forward(ref.params, X)

    var = np.exp(2.0 * params.log_std)
    ref_var = np.exp(2.0 * ref.params.log_std)
    diff = mean - ref_mean

    per_dim = (
        ref.params.log_std
        - params.log_std
        + (var + diff**2) / (2.0 * ref_var)
        - 0.5
    )

    kl = float(np.sum(np.where(mask, per_dim, 0.0)) / nrows)

    g_mean = np.where(mask, diff / ref_var, 0.0) / nrows
    g_log_std = np.sum(np.where(mask, var / ref_var - 1.0, 0.0), axis=0) / nrows

    return kl, _backward(params, inputs, g_mean, g_log_std)


def sample(
    params: PolicyParams, obs: Observation, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Sample an action chunk and return it with its per-step log-densities.

    The pre-squash draw is truncated to +/- PRE_SQUASH_LIMIT, so the
    emitted action is never exactly +/- action_scale. The returned
    log-densities are those of the untruncated squashed Gaussian at the
    emitted action; with a wide log_std the truncated draws pile up at
    scale * tanh(PRE_SQUASH_LIMIT) and the sampling distribution differs
    from that density there.

    Returns
    -------
    chunk: np.ndarray
        (chunk_size, dof) joint deltas.
    step_logps: np.ndarray
        (chunk_size,) log-densities; their sum is the chunk log-density.
    """
    X = _features(params, obs)
    dof = obs.q.shape[0]

    mean, _ = _forward(params, X)
    u = mean[0] + np.exp(params.log_std) * rng.standard_normal(params.act_dim)
    u = np.clip(u, -PRE_SQUASH_LIMIT, PRE_SQUASH_LIMIT)

    action = params.action_scale * np.tanh(u)

    # score the emitted action itself so that logp() reproduces it exactly
    chunk = action.reshape(-1, dof)
    return chunk, logp_steps(params, obs, chunk)


def act(
    params: PolicyParams, obs: Observation, rng: np.random.Generator
) -> Tuple[np.ndarray, float]:
    """
    Sample an action chunk.

    Parameters
    ----------
    params: PolicyParams
        The policy.
    obs: Observation
        The current observation.
    rng: np.random.Generator
        The sampling stream; equal streams give equal results.

    Returns
    -------
    chunk: np.ndarray
        (chunk_size, dof) joint deltas in (-action_scale, action_scale).
    logp: float
        The exact log-density of `chunk`, squash correction included.

    Raises
    ------
    NumericalFailure:
        If the network output is not finite.
    """
    chunk, step_logps = sample(params, obs, rng)
    return chunk, float(np.sum(step_logps))


def mean_action(params: PolicyParams, obs: Observation) -> np.ndarray:
    """
    The deterministic action chunk action_scale * tanh(mean).
    """
    mean, _ = _forward(params, _features(params, obs))
    return (params.action_scale * np.tanh(mean[0])).reshape(-1, obs.q.shape[0])


def logp(params: PolicyParams, obs: Observation, action: np.ndarray) -> float:
    """
    The exact log-density of an action chunk.

    Raises
    ------
    BoundaryAction:
        If any entry of `action` is at or beyond +/- action_scale.
    """
    X = _features(params, obs)
    actions = _chunk_matrix(params, action, 1)

    return float(masked_logp(params, X, actions, np.ones_like(actions, dtype=bool))[0])


def logp_steps(
    params: PolicyParams, obs: Observation, action: np.ndarray
) -> np.ndarray:
    """
    The log-density of each step (row) of an action chunk.
    """
    X = _features(params, obs)
    actions = _chunk_matrix(params, action, 1)
    dof = obs.q.shape[0]
    nsteps = params.act_dim // dof

    # one row per step, each masking that step's joints
    mask = np.zeros((nsteps, params.act_dim), dtype=bool)
    for j in range(nsteps):
        mask[j, j * dof : (j + 1) * dof] = True

    return masked_logp(
        params, np.repeat(X, nsteps, axis=0), np.repeat(actions, nsteps, axis=0), mask
    )


def grad_logp(params: PolicyParams, obs: Observation, action: np.ndarray) -> np.ndarray:
    """
    The gradient of `logp` w.r.t. every parameter, in the layout of `params.flat()`.
    """
    X = _features(params, obs)
    actions = _chunk_matrix(params, action, 1)

    return masked_logp_grad(
        params, X, actions, np.ones_like(actions, dtype=bool), np.ones(1)
    )


def kl_divergence_and_grad(
    params: PolicyParams, ref: ReferencePolicy, obs_batch: ObsLike
) -> Tuple[float, np.ndarray]:
    """
    The mean closed-form KL(pi_params || pi_ref) over a batch of observations
    and its gradient w.r.t. `params` (flat layout).

    Every action dimension of every observation counts.
    """
    X = _features(params, obs_batch)

    if X.shape[0] == 0:
        raise ContractViolation("kl_divergence needs at least one observation.")

    return masked_kl(params, ref, X, np.ones((X.shape[0], params.act_dim), dtype=bool))


def kl_divergence(
    params: PolicyParams, ref: ReferencePolicy, obs_batch: ObsLike
) -> float:
    """
    The mean closed-form KL(pi_params || pi_ref) over a batch of observations.
    """
    kl, _ = kl_divergence_and_grad(params, ref, obs_batch)
    return kl


def adam_step(
    params: PolicyParams,
    grad: np.ndarray,
    state: AdamState,
    learning_rate: float,
    max_grad_norm: Optional[float] = None,
) -> Tuple[PolicyParams, AdamState]:
    """
    One Adam descent step on `grad` (the gradient of a loss to minimize).

    Returns
    -------
    params: PolicyParams
        The updated snapshot (log_std clamped).
    state: AdamState
        The updated moments.
    """
    grad = np.asarray(grad, dtype=float)

    if not np.all(np.isfinite(grad)):
        raise NumericalFailure("Numerical failure: non-finite gradient.", params)

    if max_grad_norm is not None:
        norm = float(np.linalg.norm(grad))
        if norm > max_grad_norm:
            grad = grad * (max_grad_norm / norm)

    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad**2

    m_hat = m / (1.0 - state.beta1**step)
    v_hat = v / (1.0 - state.beta2**step)

    update = learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)

    new_state = AdamState(m, v, step, state.beta1, state.beta2, state.eps)
    return params.with_flat(params.flat() - update), new_state
