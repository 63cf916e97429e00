"""
Error hierarchy for Malliavin Lab.

Service functions raise these; the experiment dispatcher turns them into
failed report rows.
"""

from typing import Optional, Sequence


class LabError(Exception):
    """Base class for every error raised by the lab."""


class DegenerateGridError(LabError):
    """Two grid times coincide (or the grid is not strictly increasing)."""


class CapExceededError(LabError):
    """A size cap (grid length, degree, derivative order) was exceeded."""


class GridMismatchError(LabError):
    """Operands live on different grids or a vector has the wrong length."""


class BreakpointError(LabError):
    """A Cameron-Martin vector has a breakpoint that is not on the grid."""


class NonPositiveTimeError(LabError):
    """A heat kernel was asked for at t <= 0."""


class DerivativeUnavailableError(LabError):
    """The drift has no derivative (mollify it first)."""


class UnknownDriftError(LabError):
    """The drift name is not in the registry."""


class StepConfigurationError(LabError):
    """Time step does not divide the horizon into an integer number of steps."""


class InvalidParameterError(LabError):
    """A numeric parameter is outside the operation's domain."""


class ConfigError(LabError):
    """Experiment config file could not be parsed or validated."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownExperimentError(LabError):
    """The experiment name is not registered."""

    def __init__(self, name: str, available: Sequence[str]):
        self.name = name
        self.available = list(available)
        super().__init__(
            f"Unknown experiment: {name}. Available: {', '.join(self.available)}"
        )
