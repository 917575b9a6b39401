import math

import numpy as np
import numpy.testing as npt
import pytest
import scipy.integrate

from jerkgrpo import policy
from jerkgrpo.env import Observation
from jerkgrpo.errors import BoundaryAction, ContractViolation, NumericalFailure
from jerkgrpo.policy import PolicyConfig, PolicyParams, ReferencePolicy


def observation(dof: int = 2, seed: int = 0) -> Observation:
    rng = np.random.default_rng(seed)
    return Observation(
        q=rng.uniform(-1.0, 1.0, size=dof),
        goal=rng.uniform(-1.5, 1.5, size=2),
        step_frac=0.25,
    )


def small_policy(
    dof: int = 2, chunk: int = 2, scale: float = 0.2, gain: float = 1.0
) -> PolicyParams:
    """
    A narrow network whose mean head is not negligible.
    """
    config = PolicyConfig(hidden=(4, 4), output_gain=gain, init_seed=3)
    return policy.init_params(dof + 3, dof * chunk, scale, config)


def zero_mean(params: PolicyParams) -> PolicyParams:
    """
    The same network with the mean head set to zero.
    """
    return PolicyParams(
        weights=params.weights[:-1] + (np.zeros_like(params.weights[-1]),),
        biases=params.biases[:-1] + (np.zeros_like(params.biases[-1]),),
        log_std=params.log_std,
        action_scale=params.action_scale,
    )


def test_init_params() -> None:
    """
    Check the shapes and scaling of freshly initialized parameters.
    """
    params = policy.init_params(5, 8, 0.2)

    assert params.obs_dim == 5
    assert params.act_dim == 8
    assert params.hidden == (64, 64)
    assert [name for name, _ in params.tensors()] == [
        "W0", "b0", "W1", "b1", "W2", "b2", "log_std"
    ]

    # orthonormal columns in the input layer
    W0 = params.weights[0]
    npt.assert_allclose(W0.T @ W0, np.eye(5), atol=1e-12)

    # the mean head starts out tiny
    assert np.abs(params.weights[-1]).max() <= 0.01 + 1e-12
    npt.assert_allclose(params.log_std, -0.5)

    # the same seed gives the same network
    again = policy.init_params(5, 8, 0.2)
    assert np.array_equal(params.flat(), again.flat())


def test_flat_round_trip() -> None:
    """
    Check that parameters survive flattening and rejects bad vectors.
    """
    params = small_policy()
    rebuilt = params.with_flat(params.flat())

    assert rebuilt.size == params.size
    assert np.array_equal(rebuilt.flat(), params.flat())

    with pytest.raises(ContractViolation):
        params.with_flat(np.zeros(params.size + 1))

    # the parameters are read-only
    with pytest.raises(ValueError):
        params.log_std[0] = 0.0


def test_params_validation() -> None:
    """
    Check the log_std clamp and the rejection of broken parameters.
    """
    params = small_policy()
    vector = params.flat()

    vector[-1] = 10.0
    assert params.with_flat(vector).log_std[-1] == policy.LOG_STD_MAX

    vector[-1] = -10.0
    assert params.with_flat(vector).log_std[-1] == policy.LOG_STD_MIN

    vector[0] = np.nan
    with pytest.raises(NumericalFailure):
        params.with_flat(vector)

    with pytest.raises(ContractViolation):
        PolicyConfig(hidden=(0,))


def test_act_and_logp_agree() -> None:
    """
    Check that the sampled log-density is the log-density of the emitted chunk.
    """
    params = small_policy()
    obs = observation()

    chunk, lp = policy.act(params, obs, np.random.default_rng(11))

    assert chunk.shape == (2, 2)
    assert np.all(np.abs(chunk) < params.action_scale)
    assert policy.logp(params, obs, chunk) == pytest.approx(lp, abs=1e-12)

    # the per-step densities add up to the chunk density
    steps = policy.logp_steps(params, obs, chunk)
    assert steps.shape == (2,)
    assert float(np.sum(steps)) == pytest.approx(lp, abs=1e-10)

    # equal streams give equal chunks
    again, _ = policy.act(params, obs, np.random.default_rng(11))
    assert np.array_equal(chunk, again)


def test_density_is_normalized() -> None:
    """
    Integrate the one-dimensional density over the action range.
    """
    params = policy.init_params(4, 1, 0.2, PolicyConfig(hidden=(4,), output_gain=1.0))
    obs = observation(dof=1)

    def density(a: float) -> float:
        return math.exp(policy.logp(params, obs, np.array([a])))

    total, _ = scipy.integrate.quad(density, -0.2, 0.2, limit=200)

    assert total == pytest.approx(1.0, abs=1e-6)


def test_logp_is_symmetric_and_monotone() -> None:
    """
    With a zero mean the density is even and decreasing in |a|.
    """
    params = zero_mean(small_policy())
    obs = observation()

    # sigma^2 < 1/2, so the squash correction never wins
    assert np.all(np.exp(2.0 * params.log_std) < 0.5)

    magnitudes = np.linspace(0.0, 0.19, 20)
    values = []
    for m in magnitudes:
        action = np.array([m, -m, 0.5 * m, 0.0])
        flipped = -action
        values.append(policy.logp(params, obs, action))
        assert policy.logp(params, obs, flipped) == pytest.approx(values[-1], abs=1e-12)

    assert np.all(np.diff(values) < 0.0)


def test_boundary_actions() -> None:
    """
    Check that actions on the squash boundary have no density.
    """
    params = small_policy()
    obs = observation()

    action = np.array([0.2, 0.0, 0.0, 0.0])

    assert policy.is_boundary(params, action).tolist() == [True, False, False, False]

    with pytest.raises(BoundaryAction):
        policy.logp(params, obs, action)

    with pytest.raises(ContractViolation):
        policy.logp(params, obs, np.zeros(3))


def test_grad_logp_matches_finite_differences() -> None:
    """
    Check the hand-written backpropagation against central differences.
    """
    params = small_policy()
    obs = observation()
    chunk, _ = policy.act(params, obs, np.random.default_rng(5))

    grad = policy.grad_logp(params, obs, chunk)

    h = 1e-6
    base = params.flat()
    fd = np.zeros_like(base)
    for i in range(base.size):
        e = np.zeros_like(base)
        e[i] = h
        fd[i] = (
            policy.logp(params.with_flat(base + e), obs, chunk)
            - policy.logp(params.with_flat(base - e), obs, chunk)
        ) / (2 * h)

    npt.assert_allclose(grad, fd, rtol=1e-5, atol=1e-7)


def test_grad_logp_at_the_mode() -> None:
    """
    At a = scale * tanh(mean) the log_std gradient is -1 and the mean gradient 0.
    """
    params = small_policy()
    obs = observation()

    grad = policy.grad_logp(params, obs, policy.mean_action(params, obs))

    npt.assert_allclose(grad[-params.act_dim :], -1.0, atol=1e-8)
    npt.assert_allclose(grad[: -params.act_dim], 0.0, atol=1e-6)


def test_score_has_zero_mean() -> None:
    """
    The expected score of sampled actions vanishes.
    """
    params = small_policy()
    obs = observation()
    rng = np.random.default_rng(21)

    scores = np.stack(
        [
            policy.grad_logp(params, obs, policy.act(params, obs, rng)[0])
            for _ in range(4000)
        ]
    )

    mean = scores.mean(axis=0)
    error = scores.std(axis=0) / math.sqrt(len(scores))

    assert np.all(np.abs(mean) <= 5.0 * error + 1e-12)


def test_small_std_concentrates_samples() -> None:
    """
    With the smallest log_std samples sit on the mean action.
    """
    params = small_policy(scale=1.0)
    params = params.with_flat(np.concatenate([params.flat()[: -4], np.full(4, -5.0)]))
    obs = observation()
    rng = np.random.default_rng(8)

    center = policy.mean_action(params, obs)

    for _ in range(200):
        chunk, _ = policy.sample(params, obs, rng)
        npt.assert_allclose(chunk, center, atol=0.035)


def test_wide_samples_are_truncated() -> None:
    """
    With the widest log_std samples stop short of the squash boundary.
    """
    params = small_policy()
    params = params.with_flat(
        np.concatenate([params.flat()[: -4], np.full(4, policy.LOG_STD_MAX)])
    )
    obs = observation()
    rng = np.random.default_rng(5)
    edge = params.action_scale * math.tanh(policy.PRE_SQUASH_LIMIT)

    chunks = []
    for _ in range(200):
        chunk, steps = policy.sample(params, obs, rng)
        assert np.all(np.isfinite(steps))
        assert not np.any(policy.is_boundary(params, chunk))
        chunks.append(chunk)

    magnitudes = np.abs(np.array(chunks))

    # the truncated draws all land on the same edge value
    assert np.max(magnitudes) == pytest.approx(edge, rel=1e-12)
    assert np.sum(np.isclose(magnitudes, edge, rtol=1e-12, atol=0.0)) > 10


def test_kl_divergence() -> None:
    """
    Check the closed-form divergence and its direction.
    """
    params = small_policy()
    obs = [observation(seed=s) for s in range(5)]

    # a policy has no divergence from itself
    same = policy.kl_divergence(params, ReferencePolicy.freeze(params), obs)
    assert same == pytest.approx(0.0, abs=1e-12)

    # the reference is e times wider in every dimension
    shift = np.r_[np.zeros(params.size - 4), np.ones(4)]
    wider = params.with_flat(params.flat() + shift)
    kl = policy.kl_divergence(params, ReferencePolicy(wider), obs)

    assert kl == pytest.approx(4 * (0.5 + 0.5 * math.exp(-2.0)))

    value, grad = policy.kl_divergence_and_grad(params, ReferencePolicy(wider), obs)
    assert value == kl
    assert grad.shape == (params.size,)

    # and the other direction differs
    reverse = policy.kl_divergence(wider, ReferencePolicy(params), obs)
    assert reverse == pytest.approx(4 * (0.5 * math.exp(2.0) - 1.5))

    with pytest.raises(ContractViolation):
        policy.kl_divergence(params, ReferencePolicy(params), np.zeros((0, 5)))


def test_kl_gradient_matches_finite_differences() -> None:
    """
    Check the gradient of the masked divergence.
    """
    params = small_policy()
    rng = np.random.default_rng(2)
    noise = 0.1 * rng.normal(size=params.size)
    ref = ReferencePolicy(params.with_flat(params.flat() + noise))

    X = np.stack([observation(seed=s).features() for s in range(3)])
    mask = rng.uniform(size=(3, params.act_dim)) < 0.6

    _, grad = policy.masked_kl(params, ref, X, mask)

    h = 1e-6
    base = params.flat()
    fd = np.zeros_like(base)
    for i in range(base.size):
        e = np.zeros_like(base)
        e[i] = h
        fd[i] = (
            policy.masked_kl(params.with_flat(base + e), ref, X, mask)[0]
            - policy.masked_kl(params.with_flat(base - e), ref, X, mask)[0]
        ) / (2 * h)

    npt.assert_allclose(grad, fd, rtol=1e-5, atol=1e-8)


def test_adam_step() -> None:
    """
    The first Adam step moves every parameter by the learning rate.
    """
    params = small_policy()
    rng = np.random.default_rng(4)
    grad = rng.normal(size=params.size)

    initial = policy.AdamState.zeros(params.size)
    updated, state = policy.adam_step(params, grad, initial, 1e-3)

    assert state.step == 1
    npt.assert_allclose(updated.flat(), params.flat() - 1e-3 * np.sign(grad), atol=1e-8)

    # the original snapshot is untouched
    assert not np.array_equal(updated.flat(), params.flat())

    with pytest.raises(NumericalFailure) as err:
        policy.adam_step(params, np.full(params.size, np.inf), state, 1e-3)

    assert err.value.params is params


def test_adam_clips_the_gradient() -> None:
    """
    Clipping rescales the gradient before it enters the moments.
    """
    params = small_policy()
    grad = np.full(params.size, 3.0)

    _, state = policy.adam_step(
        params, grad, policy.AdamState.zeros(params.size), 1e-3, max_grad_norm=1.0
    )

    npt.assert_allclose(np.linalg.norm(state.m / 0.1), 1.0)
