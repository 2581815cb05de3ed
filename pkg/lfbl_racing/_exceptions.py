from __future__ import annotations

from typing import Any


class LfblError(Exception):
    """Base class for errors raised by the library."""


class SingularMatrixError(LfblError):
    """A pivot underflowed the singularity threshold during an LU solve."""


class NoStabilizingSolutionError(LfblError):
    """The Riccati iteration failed to reach a stabilizing solution."""


class InfeasibleError(LfblError):
    """Constraints cannot be satisfied (equality rank or reachability)."""


class MaxIterationsError(LfblError):
    """An iterative solver hit its iteration cap before meeting tolerance."""


class NonFiniteStateError(LfblError):
    """Integration produced a non-finite vehicle state."""


class SteeringOutOfRangeError(LfblError):
    """Front steering angle outside (-pi/2, pi/2)."""


class SlipOutOfRangeError(LfblError):
    """Slip angle outside (-pi/2, pi/2)."""


class ActionOutOfRangeError(LfblError):
    """Gas or brake command outside [0, 1]."""


class SpeedTooLowError(LfblError):
    """Speed below the floor where the decoupling matrix is singular."""


class EpisodeDivergedError(LfblError):
    """Linear state blew past the divergence bound during a rollout."""

    def __init__(self, message: str, *, record: Any = None) -> None:
        super().__init__(message)
        self.record = record


class NonFiniteLossError(LfblError):
    """Training loss became non-finite."""

    def __init__(self, message: str, *, checkpoint: Any = None, curve: Any = None) -> None:
        super().__init__(message)
        self.checkpoint = checkpoint
        self.curve = curve


class PolicyFileError(LfblError):
    """Policy or network weight file is missing or corrupt."""


class CommandError(LfblError):
    """Error during command execution."""
