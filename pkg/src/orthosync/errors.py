"""Exception types raised by orthosync."""


class OrthoSyncError(Exception):
    """Base class for all package errors."""


class InfeasibleDensityError(OrthoSyncError, ValueError):
    """The requested density cannot hold the spanning structure of the mode."""


class DegenerateProjectionError(OrthoSyncError, ValueError):
    """Projection onto O(d) is not unique because the input is (near) singular."""


class NumericalFailureError(OrthoSyncError, ArithmeticError):
    """A dense eigen/singular value routine did not converge."""


class EigenOverflowError(OrthoSyncError, OverflowError):
    """D^{-k} left the floating-point range during the Q-tilde correction."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration

    def __reduce__(self):
        return type(self), (str(self), self.iteration)


class DisconnectedGraphError(OrthoSyncError, ValueError):
    pass


class UndefinedGapError(OrthoSyncError, ZeroDivisionError):
    """The reference objective is (numerically) zero, so the gap ratio is undefined."""


class MissingMessageError(OrthoSyncError, KeyError):
    pass


class SimulationError(OrthoSyncError, RuntimeError):
    """A step function failed; carries the round (and agent) at which it happened."""

    def __init__(self, message, round_index, agent_id=None):
        super().__init__(message)
        self.round_index = round_index
        self.agent_id = agent_id

    def __reduce__(self):
        return type(self), (str(self), self.round_index, self.agent_id)


class ConditionError(OrthoSyncError, ValueError):
    """A convergence condition required by the selected algorithm does not hold."""
