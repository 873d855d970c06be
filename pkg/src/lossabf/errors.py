"""Exception types shared across the package.

The CLI maps these onto exit codes, so stages should raise the most
specific type that applies.
"""


class LossAbfError(Exception):
    """Base class for package errors."""


class DomainError(LossAbfError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class ConfigError(LossAbfError, ValueError):
    """An invalid tag, preset, or configuration value."""


class IngestionError(LossAbfError, ValueError):
    """Malformed input data; carries the offending row where known."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class OptimizationError(LossAbfError, RuntimeError):
    """Criterion optimization failed to converge; carries the best fit seen."""

    def __init__(self, message, best_fit=None):
        super().__init__(message)
        self.best_fit = best_fit


class FilterDegeneracyError(LossAbfError, RuntimeError):
    """All particle weights vanished at some time step."""

    def __init__(self, t):
        super().__init__(f"particle filter degenerated at t={t} (all weights zero)")
        self.t = t


class EstimationError(LossAbfError, RuntimeError):
    """A derived quantity (e.g. the scale factor) could not be estimated."""


class NumericalError(LossAbfError, RuntimeError):
    """Linear algebra or other numerical failure."""
