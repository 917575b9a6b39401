"""
Differential kinematics of planar serial manipulators.

This maps joint-space trajectories to end-effector velocity, acceleration
and jerk through the Jacobian chain

    V    = J q'
    A    = J' q' + J q''
    Jerk = J'' q' + 2 J' q'' + J q'''

and estimates the joint derivatives of sampled trajectories with finite
difference stencils. Only the 2D linear (positional) part of each quantity
is computed; orientation is not represented.

Every kinematic map accepts arrays with arbitrary leading batch axes, i.e.
`q` can be a single (dof,) configuration or an (N, dof) stack.
"""
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from .errors import (
    ContractViolation,
    InfeasibleDemonstration,
    NumericalFailure,
    TrajectoryTooShort,
)

__all__ = [
    "ManipulatorModel",
    "JointState",
    "JointTrajectory",
    "EeKinematicState",
    "forward_kinematics",
    "jacobian",
    "jacobian_dot",
    "jacobian_ddot",
    "stencil_weights",
    "estimate_joint_derivatives",
    "ee_kinematics",
    "ee_positions",
    "ee_jerk",
    "two_link_ik",
]

# the supported ways of computing J' and J''
DERIVATIVE_METHODS = ("analytic", "finite_difference")

# the minimum number of samples that the third-derivative stencil needs
MIN_SAMPLES = 5


@dataclass(frozen=True)
class ManipulatorModel:
    """
    The geometry of a planar n-link arm.

    Each joint rotates about the z-axis; joint i's angle is measured
    relative to link i-1 so the absolute angle of link k is the
    cumulative sum of q[0..k].
    """

    # link lengths in meters
    link_lengths: Tuple[float, ...]

    # closed (lower, upper) interval for each joint in radians
    joint_limits: Tuple[Tuple[float, float], ...]

    def __post_init__(self) -> None:

        # normalize the inputs into tuples of floats
        try:
            lengths = tuple(float(length) for length in self.link_lengths)
            limits = tuple((float(lo), float(hi)) for lo, hi in self.joint_limits)
        except (TypeError, ValueError) as err:
            raise ContractViolation(f"Malformed manipulator geometry: {err}")

        if len(lengths) < 1:
            raise ContractViolation("A manipulator needs at least one link.")

        if len(limits) != len(lengths):
            raise ContractViolation(
                f"Got {len(lengths)} link lengths but {len(limits)} joint limits."
            )

        if not all(np.isfinite(lengths)) or min(lengths) <= 0:
            raise ContractViolation(f"Link lengths must be positive, got {lengths}.")

        for i, (lo, hi) in enumerate(limits):
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
                raise ContractViolation(f"Joint {i} has an empty limit [{lo}, {hi}].")

        object.__setattr__(self, "link_lengths", lengths)
        object.__setattr__(self, "joint_limits", limits)

    @property
    def dof(self) -> int:
        """
        The number of joints (equal to the number of links).
        """
        return len(self.link_lengths)

    @property
    def lengths(self) -> np.ndarray:
        return np.asarray(self.link_lengths, dtype=float)

    @property
    def lower(self) -> np.ndarray:
        return np.asarray([lo for lo, _ in self.joint_limits], dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.asarray([hi for _, hi in self.joint_limits], dtype=float)

    @property
    def reach(self) -> float:
        """
        The radius of the workspace (the arm fully extended).
        """
        return float(sum(self.link_lengths))

    def home(self) -> np.ndarray:
        """
        The mid-range configuration of every joint.
        """
        return 0.5 * (self.lower + self.upper)

    def clamp(self, q: np.ndarray) -> np.ndarray:
        """
        Clamp `q` element-wise into the joint limits.
        """
        return np.clip(q, self.lower, self.upper)

    def within_limits(self, q: np.ndarray, tol: float = 0.0) -> bool:
        """
        Return True if every entry of `q` is inside its joint limit (+/- `tol`).
        """
        q = np.asarray(q, dtype=float)
        return bool(np.all(q >= self.lower - tol) and np.all(q <= self.upper + tol))


@dataclass(frozen=True)
class JointState:
    """
    Joint positions and their first three time derivatives at one sample.
    """

    q: np.ndarray
    q_dot: np.ndarray
    q_ddot: np.ndarray
    q_dddot: np.ndarray

    def __post_init__(self) -> None:
        arrays = (self.q, self.q_dot, self.q_ddot, self.q_dddot)
        if any(np.ndim(v) == 0 for v in arrays):
            raise ContractViolation("JointState entries must be vectors, not scalars.")
        sizes = {np.shape(v)[-1] for v in arrays}
        if len(sizes) != 1:
            raise ContractViolation(f"JointState vectors differ in length: {sizes}.")


@dataclass(frozen=True)
class JointTrajectory:
    """
    A uniformly sampled joint-position time series.

    `samples` is an (N, dof) array; sample i is taken at time i * dt.
    """

    dt: float
    samples: np.ndarray

    def __post_init__(self) -> None:

        samples = np.array(self.samples, dtype=float)

        if samples.ndim != 2:
            raise ContractViolation(
                f"Trajectory samples must be (N, dof), got shape {samples.shape}."
            )

        if samples.shape[0] < 2:
            raise ContractViolation("A trajectory needs at least 2 samples.")

        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ContractViolation(f"Sample period must be positive, got {self.dt}.")

        # the stored samples are never modified
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "dt", float(self.dt))

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    @property
    def dof(self) -> int:
        return int(self.samples.shape[1])

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.dt


@dataclass(frozen=True)
class EeKinematicState:
    """
    End-effector position, velocity, acceleration and jerk (all 2-vectors).
    """

    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    jerk: np.ndarray


def _as_joint_array(
    model: ManipulatorModel, value: np.ndarray, name: str
) -> np.ndarray:
    """
    Convert `value` to a float array and check its last axis against `model.dof`.
    """
    arr = np.asarray(value, dtype=float)

    if arr.ndim == 0 or arr.shape[-1] != model.dof:
        raise ContractViolation(
            f"`{name}` has shape {arr.shape}; expected last axis of length {model.dof}."
        )

    return arr


def _tail_sum(terms: np.ndarray) -> np.ndarray:
    """
    Column i of the result is the sum of columns k >= i of `terms`.
    """
    return np.flip(np.cumsum(np.flip(terms, axis=-1), axis=-1), axis=-1)


def _matvec(matrix: np.ndarray, vector: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...j->...i", matrix, vector)


def forward_kinematics(model: ManipulatorModel, q: np.ndarray) -> np.ndarray:
    """
    Compute the end-effector position.

    Parameters
    ----------
    model: ManipulatorModel
        The arm geometry.
    q: np.ndarray
        Joint positions in radians, shape (..., dof).

    Returns
    -------
    position: np.ndarray
        The end-effector position in meters, shape (..., 2).

    Raises
    ------
    ContractViolation:
        If the last axis of `q` is not `model.dof` long.
    """
    q = _as_joint_array(model, q, "q")

    # the absolute angle of each link
    phi = np.cumsum(q, axis=-1)

    x = np.sum(model.lengths * np.cos(phi), axis=-1)
    y = np.sum(model.lengths * np.sin(phi), axis=-1)

    return np.stack([x, y], axis=-1)


def ee_positions(model: ManipulatorModel, traj: JointTrajectory) -> np.ndarray:
    """
    The (N, 2) end-effector path of a joint trajectory.
    """
    return forward_kinematics(model, traj.samples)


def jacobian(model: ManipulatorModel, q: np.ndarray) -> np.ndarray:
    """
    The analytic 2 x dof positional Jacobian.

    Column i is sum_{k >= i} L_k (-sin phi_k, cos phi_k) where phi_k is
    the absolute angle of link k.

    Parameters
    ----------
    model: ManipulatorModel
        The arm geometry.
    q: np.ndarray
        Joint positions, shape (..., dof).

    Returns
    -------
    J: np.ndarray
        Shape (..., 2, dof).
    """
    q = _as_joint_array(model, q, "q")
    phi = np.cumsum(q, axis=-1)
    L = model.lengths

    terms = np.stack([-L * np.sin(phi), L * np.cos(phi)], axis=-2)

    return _tail_sum(terms)


def _check_method(method: str) -> None:
    if method not in DERIVATIVE_METHODS:
        raise ContractViolation(
            f"Unknown derivative method '{method}'; use one of {DERIVATIVE_METHODS}."
        )


def jacobian_dot(
    model: ManipulatorModel,
    q: np.ndarray,
    q_dot: np.ndarray,
    method: str = "analytic",
    step: float = 1e-5,
) -> np.ndarray:
    """
    The time derivative of the Jacobian along a motion with joint velocity `q_dot`.

    With `method="finite_difference"` this is the central difference of
    `jacobian` along q + t q_dot with step `step`; this is the fallback
    for manipulators without a closed form.

    Parameters
    ----------
    model: ManipulatorModel
        The arm geometry.
    q: np.ndarray
        Joint positions, shape (..., dof).
    q_dot: np.ndarray
        Joint velocities, shape (..., dof).
    method: str
        "analytic" or "finite_difference".
    step: float
        The finite difference step (only used by "finite_difference").

    Returns
    -------
    J_dot: np.ndarray
        Shape (..., 2, dof).
    """
    _check_method(method)
    q = _as_joint_array(model, q, "q")
    q_dot = _as_joint_array(model, q_dot, "q_dot")

    if method == "finite_difference":
        return (
            jacobian(model, q + step * q_dot) - jacobian(model, q - step * q_dot)
        ) / (2.0 * step)

    phi = np.cumsum(q, axis=-1)
    omega = np.cumsum(q_dot, axis=-1)
    L = model.lengths

    terms = np.stack(
        [-L * omega * np.cos(phi), -L * omega * np.sin(phi)],
        axis=-2,
    )

    return _tail_sum(terms)


def jacobian_ddot(
    model: ManipulatorModel,
    q: np.ndarray,
    q_dot: np.ndarray,
    q_ddot: np.ndarray,
    method: str = "analytic",
    step: float = 1e-4,
) -> np.ndarray:
    """
    The second time derivative of the Jacobian along a joint path.

    The analytic form is the full chain-rule expansion, so it depends on
    q, q' and q''. The finite difference fallback takes the second-order
    central difference of `jacobian` along the quadratic path
    q + t q' + t^2 q'' / 2.

    Parameters
    ----------
    model: ManipulatorModel
        The arm geometry.
    q, q_dot, q_ddot: np.ndarray
        Joint positions, velocities and accelerations, shape (..., dof).
    method: str
        "analytic" or "finite_difference".
    step: float
        The finite difference step (only used by "finite_difference").

    Returns
    -------
    J_ddot: np.ndarray
        Shape (..., 2, dof).
    """
    _check_method(method)
    q = _as_joint_array(model, q, "q")
    q_dot = _as_joint_array(model, q_dot, "q_dot")
    q_ddot = _as_joint_array(model, q_ddot, "q_ddot")

    if method == "finite_difference":
        half = 0.5 * step**2 * q_ddot
        forward = jacobian(model, q + step * q_dot + half)
        backward = jacobian(model, q - step * q_dot + half)
        return (forward - 2.0 * jacobian(model, q) + backward) / step**2

    phi = np.cumsum(q, axis=-1)
    omega = np.cumsum(q_dot, axis=-1)
    alpha = np.cumsum(q_ddot, axis=-1)
    L = model.lengths

    cos, sin = np.cos(phi), np.sin(phi)

    terms = np.stack(
        [
            L * (-alpha * cos + omega**2 * sin),
            L * (-alpha * sin - omega**2 * cos),
        ],
        axis=-2,
    )

    return _tail_sum(terms)


def stencil_weights(offsets: Sequence[float], order: int) -> np.ndarray:
    """
    Finite difference weights for the `order`-th derivative on `offsets`.

    The weights solve the Taylor system so that the stencil is exact for
    every polynomial of degree < len(offsets). Offsets are in units of
    the sample spacing; divide the weighted sum by dt**order.

    Parameters
    ----------
    offsets: Sequence[float]
        The sample offsets relative to the evaluation point.
    order: int
        The derivative order.

    Returns
    -------
    weights: np.ndarray
        One weight per offset.
    """
    offsets = np.asarray(offsets, dtype=float)
    rank = offsets.size

    if order >= rank:
        raise ContractViolation(
            f"A derivative of order {order} needs more than {rank} points."
        )

    # row r holds offset**r / r!
    A = np.stack([offsets**row / math.factorial(row) for row in range(rank)])

    b = np.zeros(rank)
    b[order] = 1.0

    return scipy.linalg.solve(A, b)


# the interior stencil widths for each derivative order (all second-order accurate)
_INTERIOR_WIDTH = {1: 3, 2: 3, 3: 5}


@lru_cache(maxsize=128)
def _difference_matrix(n: int, order: int) -> np.ndarray:
    """
    The (n, n) matrix applying the `order`-th derivative stencil to n samples.

    Interior rows use the centered stencil; rows too close to an edge use
    a one-sided window of order + 2 points, which keeps the accuracy at
    second order.
    """
    half = _INTERIOR_WIDTH[order] // 2
    width = order + 2

    D = np.zeros((n, n))

    for i in range(n):
        if half <= i < n - half:
            offsets = np.arange(-half, half + 1)
        else:
            start = min(max(i - width // 2, 0), n - width)
            offsets = np.arange(start, start + width) - i

        D[i, i + offsets] = stencil_weights(offsets, order)

    D.setflags(write=False)
    return D


def _derivative_arrays(
    traj: JointTrajectory,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    (q, q', q'', q''') as (N, dof) arrays for every sample of `traj`.
    """
    n = len(traj)

    if n < MIN_SAMPLES:
        raise TrajectoryTooShort(
            f"Trajectory too short: {n} samples, at least {MIN_SAMPLES} needed."
        )

    q = traj.samples
    dt = traj.dt

    q_dot = _difference_matrix(n, 1) @ q / dt
    q_ddot = _difference_matrix(n, 2) @ q / dt**2
    q_dddot = _difference_matrix(n, 3) @ q / dt**3

    return q, q_dot, q_ddot, q_dddot


def estimate_joint_derivatives(traj: JointTrajectory) -> List[JointState]:
    """
    Estimate joint velocity, acceleration and jerk at every sample.

    Interior samples use central differences (3-point for q' and
    q'', the 5-point antisymmetric stencil for q'''); samples near either
    end use one-sided stencils of the same (second) order.

    Parameters
    ----------
    traj: JointTrajectory
        The sampled joint path.

    Returns
    -------
    states: List[JointState]
        One state per input sample.

    Raises
    ------
    TrajectoryTooShort:
        If `traj` has fewer than 5 samples.
    """
    q, q_dot, q_ddot, q_dddot = _derivative_arrays(traj)

    return [
        JointState(q[i], q_dot[i], q_ddot[i], q_dddot[i]) for i in range(len(traj))
    ]


def _ee_arrays(
    model: ManipulatorModel,
    q: np.ndarray,
    q_dot: np.ndarray,
    q_ddot: np.ndarray,
    q_dddot: np.ndarray,
    method: str,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    The stacked end-effector position, velocity, acceleration and jerk.
    """
    J = jacobian(model, q)
    J_dot = jacobian_dot(model, q, q_dot, method=method)
    J_ddot = jacobian_ddot(model, q, q_dot, q_ddot, method=method)

    position = forward_kinematics(model, q)
    velocity = _matvec(J, q_dot)
    acceleration = _matvec(J_dot, q_dot) + _matvec(J, q_ddot)
    jerk = _matvec(J_ddot, q_dot) + 2.0 * _matvec(J_dot, q_ddot) + _matvec(J, q_dddot)

    for name, value in (
        ("position", position),
        ("velocity", velocity),
        ("acceleration", acceleration),
        ("jerk", jerk),
    ):
        if not np.all(np.isfinite(value)):
            raise NumericalFailure(f"Non-finite end-effector {name}.")

    return position, velocity, acceleration, jerk


def ee_kinematics(
    model: ManipulatorModel, states: Sequence[JointState], method: str = "analytic"
) -> List[EeKinematicState]:
    """
    Map joint states to end-effector kinematic states.

    Parameters
    ----------
    model: ManipulatorModel
        The arm geometry.
    states: Sequence[JointState]
        The joint states (e.g. from `estimate_joint_derivatives`).
    method: str
        How J' and J'' are computed ("analytic" or "finite_difference").

    Returns
    -------
    ee: List[EeKinematicState]
        One end-effector state per joint state.
    """
    if len(states) == 0:
        raise ContractViolation("ee_kinematics needs at least one joint state.")

    q = _as_joint_array(model, np.stack([s.q for s in states]), "q")
    q_dot = _as_joint_array(model, np.stack([s.q_dot for s in states]), "q_dot")
    q_ddot = _as_joint_array(model, np.stack([s.q_ddot for s in states]), "q_ddot")
    q_dddot = _as_joint_array(model, np.stack([s.q_dddot for s in states]), "q_dddot")

    P, V, A, Jk = _ee_arrays(model, q, q_dot, q_ddot, q_dddot, method)

    return [EeKinematicState(P[i], V[i], A[i], Jk[i]) for i in range(len(states))]


def ee_jerk(
    model: ManipulatorModel, traj: JointTrajectory, method: str = "analytic"
) -> np.ndarray:
    """
    The (N, 2) end-effector jerk of a sampled joint trajectory.

    This is `ee_kinematics(estimate_joint_derivatives(traj))` without the
    per-sample objects.
    """
    if traj.dof != model.dof:
        raise ContractViolation(
            f"Trajectory has {traj.dof} joints but the model has {model.dof}."
        )

    return _ee_arrays(model, *_derivative_arrays(traj), method)[3]


def _wrap_into(angle: float, lo: float, hi: float, hint: float) -> Optional[float]:
    """
    Return the 2*pi-equivalent of `angle` inside [lo, hi] closest to `hint`.
    """
    candidates = [angle + 2.0 * math.pi * k for k in (-1, 0, 1)]
    inside = [a for a in candidates if lo <= a <= hi]

    if not inside:
        return None

    return min(inside, key=lambda a: abs(a - hint))


def two_link_ik(
    model: ManipulatorModel, xy: np.ndarray, q_hint: Optional[np.ndarray] = None
) -> np.ndarray:
    """
    Closed-form inverse kinematics of a 2-link planar arm.

    Both elbow branches are tried; the solution inside the joint limits
    that is closest to `q_hint` (default: the home configuration) wins.

    Parameters
    ----------
    model: ManipulatorModel
        A 2-link arm.
    xy: np.ndarray
        The target end-effector position.
    q_hint: np.ndarray, optional
        The configuration to stay close to.

    Returns
    -------
    q: np.ndarray
        A joint configuration reaching `xy`.

    Raises
    ------
    ContractViolation:
        If the model does not have exactly 2 links.
    InfeasibleDemonstration:
        If `xy` is unreachable inside the joint limits.
    """
    if model.dof != 2:
        raise ContractViolation(f"two_link_ik needs a 2-link arm, got {model.dof}.")

    x, y = (float(v) for v in np.asarray(xy, dtype=float))
    L1, L2 = model.link_lengths
    hint = model.home() if q_hint is None else np.asarray(q_hint, dtype=float)

    # the law of cosines for the elbow
    c2 = (x * x + y * y - L1 * L1 - L2 * L2) / (2.0 * L1 * L2)

    if abs(c2) > 1.0 + 1e-12:
        raise InfeasibleDemonstration(f"Target {(x, y)} is outside the workspace.")

    c2 = min(1.0, max(-1.0, c2))

    solutions = []
    for q2 in (math.acos(c2), -math.acos(c2)):

        q1 = math.atan2(y, x) - math.atan2(L2 * math.sin(q2), L1 + L2 * math.cos(q2))

        (lo1, hi1), (lo2, hi2) = model.joint_limits
        q1_wrapped = _wrap_into(q1, lo1, hi1, float(hint[0]))
        q2_wrapped = _wrap_into(q2, lo2, hi2, float(hint[1]))

        if q1_wrapped is not None and q2_wrapped is not None:
            solutions.append(np.array([q1_wrapped, q2_wrapped]))

    if not solutions:
        raise InfeasibleDemonstration(
            f"Target {(x, y)} cannot be reached inside the joint limits."
        )

    # and pick the branch closest to the hint
    return min(solutions, key=lambda q: float(np.sum((q - hint) ** 2)))
