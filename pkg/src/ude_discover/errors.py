"""Exception types shared across the package."""


class UdeError(Exception):
    """Base class for all package-specific errors."""


class NonFiniteValueError(UdeError):
    """A recorded computation produced inf or nan.

    Carries the tape position of the offending node when known.
    """

    def __init__(self, message, position=None):
        super().__init__(message)
        self.position = position


class StructuralError(UdeError, ValueError):
    """Mismatched shapes, grids, or tape/parameter pairings."""


class ParameterDomainError(UdeError, ValueError):
    """A parameter value is outside its admissible domain."""


class StateDomainError(UdeError, ValueError):
    """A state vector violates its invariants."""


class DivergenceError(UdeError):
    """Numerical integration produced a non-finite state.

    ``grid_index`` and ``substep`` locate the failing update when the
    integration ran eagerly; ``position`` names the tape node when the
    failure happened during a recorded replay.
    """

    def __init__(self, message, grid_index=None, substep=None, position=None):
        super().__init__(message)
        self.grid_index = grid_index
        self.substep = substep
        self.position = position


class TrialFailure(UdeError):
    """A single experiment trial could not be completed."""
