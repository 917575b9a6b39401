"""
Exceptions raised by jerkgrpo.
"""
from typing import Any, Optional

__all__ = [
    "JerkGrpoError",
    "ContractViolation",
    "TrajectoryTooShort",
    "EmptyTrajectory",
    "InfeasibleDemonstration",
    "BoundaryAction",
    "EpisodeFinished",
    "NumericalFailure",
    "ConfigError",
    "FormatError",
]


class JerkGrpoError(Exception):
    """
    The base class for every error raised by this package.
    """


class ContractViolation(JerkGrpoError, ValueError):
    """
    An argument broke a documented precondition (wrong shape, out of range).
    """


class TrajectoryTooShort(ContractViolation):
    """
    A trajectory has too few samples for the derivative stencils.
    """


class EmptyTrajectory(ContractViolation):
    """
    A smoothness statistic was requested over zero samples.
    """


class InfeasibleDemonstration(ContractViolation):
    """
    A scripted demonstration cannot be planned inside the joint limits.
    """


class BoundaryAction(ContractViolation):
    """
    An action lies on (or outside) the boundary of the squashed action range.
    """


class EpisodeFinished(JerkGrpoError, RuntimeError):
    """
    An environment was stepped after its episode was done.
    """


class NumericalFailure(JerkGrpoError, ArithmeticError):
    """
    A computation produced non-finite values.

    If the failure happened during training, `params` holds the last
    finite policy parameters so that the caller can checkpoint them.
    """

    def __init__(self, message: str, params: Optional[Any] = None):
        super().__init__(message)

        # the last good parameters (if any)
        self.params = params


class ConfigError(JerkGrpoError, ValueError):
    """
    An experiment config could not be read or failed validation.
    """


class FormatError(JerkGrpoError, ValueError):
    """
    A file did not match its documented format.
    """
