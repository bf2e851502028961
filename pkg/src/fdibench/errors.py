"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, numerical failures
(NumericalError, DivergenceError, TrainingDivergedError) -> 3, I/O
problems (plain OSError) -> 4.
"""

from __future__ import annotations


class FdibenchError(Exception):
    """Base class for everything raised deliberately by this package."""


class ContractViolation(FdibenchError):
    """An argument broke a documented precondition (shape, dimension, range)."""


class ConfigError(FdibenchError):
    """Bad configuration file: unknown key, missing field, wrong type/value."""


class InvalidStateError(FdibenchError):
    """A state or input vector contains non-finite entries."""


class NumericalError(FdibenchError):
    """A numerical computation produced non-finite or unusable values."""


class FilterNumericalError(NumericalError):
    """Filter linear algebra failed (singular innovation covariance etc.)."""


class DivergenceError(FdibenchError):
    """Simulation left the configured state-norm bound.

    Carries the partial record so a caller can inspect how far it got.
    """

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class CalibrationInfeasibleError(FdibenchError):
    """No threshold meets the requested false-alarm target on the corpus."""

    def __init__(self, message: str, achieved_rate: float):
        super().__init__(message)
        self.achieved_rate = achieved_rate


class TrainingDivergedError(FdibenchError):
    """Training loss became non-finite; carries the last finite checkpoint."""

    def __init__(self, message: str, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint
