"""
Trajectory smoothness metrics and minimum-jerk reference trajectories.
"""
from dataclasses import dataclass
from typing import ClassVar, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.integrate
from numpy.polynomial import Polynomial

from .errors import ContractViolation, EmptyTrajectory, InfeasibleDemonstration
from .kinematics import (
    JointTrajectory,
    ManipulatorModel,
    _derivative_arrays,
    ee_jerk,
    forward_kinematics,
    two_link_ik,
)

__all__ = [
    "SmoothnessReport",
    "MinJerkSegment",
    "average_jerk",
    "trajectory_report",
    "joint_jerk_report",
    "min_jerk_profile",
    "min_jerk_position",
    "sample_min_jerk_joint_traj",
    "sample_min_jerk_cartesian_traj",
    "polynomial_profile",
    "integrated_squared_jerk",
]


@dataclass(frozen=True)
class SmoothnessReport:
    """
    Summary statistics of a jerk time series.

    `mean_jerk_norm` is (1/T) sum_t |Jerk(t)|_2 over all T samples.
    """

    mean_jerk_norm: float
    peak_jerk_norm: float
    mean_sq_jerk: float
    horizon: int

    # the CSV column names (in order)
    COLUMNS: ClassVar[Tuple[str, ...]] = (
        "mean_jerk",
        "peak_jerk",
        "mean_sq_jerk",
        "horizon",
    )

    @classmethod
    def csv_header(cls) -> List[str]:
        return list(cls.COLUMNS)

    def as_row(self) -> List[str]:
        """
        The report as one CSV row (floats written with full precision).
        """
        return [
            repr(self.mean_jerk_norm),
            repr(self.peak_jerk_norm),
            repr(self.mean_sq_jerk),
            str(self.horizon),
        ]

    def as_dict(self) -> Dict[str, Union[float, int]]:
        return dict(zip(self.COLUMNS, (
            self.mean_jerk_norm,
            self.peak_jerk_norm,
            self.mean_sq_jerk,
            self.horizon,
        )))

    @classmethod
    def from_dict(cls, values: Dict[str, Union[float, int]]) -> "SmoothnessReport":
        return cls(
            float(values["mean_jerk"]),
            float(values["peak_jerk"]),
            float(values["mean_sq_jerk"]),
            int(values["horizon"]),
        )


@dataclass(frozen=True)
class MinJerkSegment:
    """
    A rest-to-rest point-to-point motion of duration `duration` seconds.
    """

    start: np.ndarray
    end: np.ndarray
    duration: float

    def __post_init__(self) -> None:
        start = np.asarray(self.start, dtype=float)
        end = np.asarray(self.end, dtype=float)

        if start.shape != end.shape:
            raise ContractViolation(
                f"Segment start {start.shape} and end {end.shape} differ in shape."
            )

        if not (np.isfinite(self.duration) and self.duration > 0):
            raise ContractViolation(
                f"Segment duration must be > 0, got {self.duration}."
            )

        object.__setattr__(self, "start", start)
        object.__setattr__(self, "end", end)


def average_jerk(
    jerks: Union[np.ndarray, Sequence[Sequence[float]]]
) -> SmoothnessReport:
    """
    Compute the average-jerk statistic of a jerk time series.

    Parameters
    ----------
    jerks: array-like
        T jerk vectors, shape (T, m). A 1-D input is always read as T
        scalar jerks, never as one m-vector: pass a single vector as
        [[x, y]].

    Returns
    -------
    report: SmoothnessReport
        Mean, peak and mean-square of the Euclidean jerk norm over all T samples.

    Raises
    ------
    EmptyTrajectory:
        If `jerks` is empty.
    ContractViolation:
        If any entry is not finite.
    """
    arr = np.asarray(jerks, dtype=float)

    if arr.size == 0:
        raise EmptyTrajectory("Cannot compute the jerk of an empty trajectory.")

    if arr.ndim == 1:
        arr = arr[:, None]

    if not np.all(np.isfinite(arr)):
        raise ContractViolation("Jerk samples must be finite.")

    norms = np.linalg.norm(arr, axis=-1)

    return SmoothnessReport(
        mean_jerk_norm=float(np.mean(norms)),
        peak_jerk_norm=float(np.max(norms)),
        mean_sq_jerk=float(np.mean(norms**2)),
        horizon=int(norms.size),
    )


def trajectory_report(
    model: ManipulatorModel, traj: JointTrajectory, method: str = "analytic"
) -> SmoothnessReport:
    """
    The end-effector smoothness report of a joint trajectory.

    This chains derivative estimation, the Jacobian jerk map and
    `average_jerk`.
    """
    return average_jerk(ee_jerk(model, traj, method=method))


def joint_jerk_report(traj: JointTrajectory) -> SmoothnessReport:
    """
    The smoothness report of the joint-space jerk of `traj`.
    """
    return average_jerk(_derivative_arrays(traj)[3])


def min_jerk_profile(tau: Union[float, np.ndarray], derivative: int = 0) -> np.ndarray:
    """
    The normalized minimum-jerk profile s(tau) = 10 tau^3 - 15 tau^4 + 6 tau^5.

    Parameters
    ----------
    tau: float or np.ndarray
        Normalized time in [0, 1].
    derivative: int
        0 for s, up to 3 for s''' (derivatives with respect to tau).

    Returns
    -------
    value: np.ndarray
        The profile (or derivative) at `tau`.
    """
    tau = np.asarray(tau, dtype=float)

    if derivative == 0:
        return tau**3 * (10.0 + tau * (-15.0 + 6.0 * tau))
    elif derivative == 1:
        return tau**2 * (30.0 + tau * (-60.0 + 30.0 * tau))
    elif derivative == 2:
        return tau * (60.0 + tau * (-180.0 + 120.0 * tau))
    elif derivative == 3:
        return 60.0 + tau * (-360.0 + 360.0 * tau)
    else:
        raise ContractViolation(
            f"Only derivatives 0..3 are available, got {derivative}."
        )


def min_jerk_position(seg: MinJerkSegment, t: float) -> np.ndarray:
    """
    The position along `seg` at time `t`.

    Parameters
    ----------
    seg: MinJerkSegment
        The segment.
    t: float
        Time in seconds, 0 <= t <= seg.duration.

    Returns
    -------
    position: np.ndarray
        start + (end - start) * s(t / duration)

    Raises
    ------
    ContractViolation:
        If `t` lies outside [0, duration].
    """
    if not (0.0 <= t <= seg.duration):
        raise ContractViolation(f"Time {t} lies outside [0, {seg.duration}].")

    return seg.start + (seg.end - seg.start) * float(min_jerk_profile(t / seg.duration))


def _step_count(duration: float, dt: float) -> int:
    """
    The number of dt-steps spanning `duration` (at least 2).
    """
    if not (dt > 0 and np.isfinite(dt)):
        raise ContractViolation(f"Sample period must be positive, got {dt}.")

    if duration < 2.0 * dt * (1.0 - 1e-9):
        raise ContractViolation(
            f"Duration {duration} s is shorter than two samples of {dt} s."
        )

    return max(2, int(round(duration / dt)))


def sample_min_jerk_joint_traj(
    model: ManipulatorModel,
    q_start: np.ndarray,
    q_goal: np.ndarray,
    duration: float,
    dt: float,
) -> JointTrajectory:
    """
    Sample a per-joint minimum-jerk motion from `q_start` to `q_goal`.

    The motion spans round(duration / dt) steps; the first and last
    samples equal the endpoints exactly. Every sample is a convex
    combination of the endpoints so it stays within the joint limits.

    Parameters
    ----------
    model: ManipulatorModel
        The arm (only its joint limits are used).
    q_start, q_goal: np.ndarray
        The endpoints in radians.
    duration: float
        The motion time in seconds (>= 2 dt).
    dt: float
        The sample period in seconds.

    Returns
    -------
    traj: JointTrajectory

    Raises
    ------
    InfeasibleDemonstration:
        If either endpoint violates the joint limits.
    """
    q_start = np.asarray(q_start, dtype=float)
    q_goal = np.asarray(q_goal, dtype=float)

    if q_start.shape != (model.dof,) or q_goal.shape != (model.dof,):
        raise ContractViolation(
            f"Endpoints must have {model.dof} entries, "
            f"got {q_start.shape}, {q_goal.shape}."
        )

    for name, q in (("start", q_start), ("goal", q_goal)):
        if not model.within_limits(q):
            raise InfeasibleDemonstration(
                f"Infeasible demonstration: {name} {q} violates the joint limits."
            )

    nsteps = _step_count(duration, dt)

    # the normalized time of every sample
    tau = np.arange(nsteps + 1) / nsteps

    samples = q_start + np.outer(min_jerk_profile(tau), q_goal - q_start)

    # pin the endpoints exactly
    samples[0] = q_start
    samples[-1] = q_goal

    return JointTrajectory(dt, samples)


def sample_min_jerk_cartesian_traj(
    model: ManipulatorModel,
    q_start: np.ndarray,
    goal: np.ndarray,
    duration: float,
    dt: float,
) -> JointTrajectory:
    """
    A straight-line Cartesian minimum-jerk motion mapped through 2-link IK.

    Each sample is solved with the previous sample as the IK hint so the
    elbow branch stays continuous.

    Raises
    ------
    InfeasibleDemonstration:
        If any point on the line cannot be reached inside the joint limits.
    """
    q_start = np.asarray(q_start, dtype=float)

    if not model.within_limits(q_start):
        raise InfeasibleDemonstration(
            f"Infeasible demonstration: start {q_start} violates the joint limits."
        )

    nsteps = _step_count(duration, dt)
    segment = MinJerkSegment(forward_kinematics(model, q_start), goal, nsteps * dt)

    samples = [q_start]
    for i in range(1, nsteps + 1):
        # clip the last time so that float rounding never leaves the segment
        t = min(i * dt, segment.duration)
        samples.append(two_link_ik(model, min_jerk_position(segment, t), samples[-1]))

    return JointTrajectory(dt, np.stack(samples))


def polynomial_profile(order: int) -> Polynomial:
    """
    The rest-to-rest point-to-point polynomial profile of a given order.

    - 3: the cubic with zero boundary velocity.
    - 5: the minimum-jerk quintic (zero boundary velocity and acceleration).
    - 7: the septic (zero boundary velocity, acceleration and jerk).
    """
    coefficients = {
        3: [0.0, 0.0, 3.0, -2.0],
        5: [0.0, 0.0, 0.0, 10.0, -15.0, 6.0],
        7: [0.0, 0.0, 0.0, 0.0, 35.0, -84.0, 70.0, -20.0],
    }

    if order not in coefficients:
        raise ContractViolation(f"No profile of order {order}; use 3, 5 or 7.")

    return Polynomial(coefficients[order])


def integrated_squared_jerk(
    profile: Polynomial, duration: Optional[float] = None
) -> float:
    """
    The integral of s'''(tau)^2 over [0, 1] (or over [0, duration] in time units).
    """
    jerk = profile.deriv(3)

    value, _ = scipy.integrate.quad(lambda tau: float(jerk(tau)) ** 2, 0.0, 1.0)

    # rescale from normalized time if a duration was given
    if duration is not None:
        value /= duration**5

    return float(value)
