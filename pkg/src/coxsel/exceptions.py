"""Exception types shared across the package."""


class CoxselError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(CoxselError):
    """Invalid or inconsistent run configuration."""


class SchemaError(CoxselError):
    """CSV schema problem: missing or duplicated columns."""


class CsvParseError(CoxselError):
    """A cell failed to parse; carries row and column context."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class ValidationError(CoxselError):
    """Data fails a structural requirement (negative times, missing values, ...)."""


class NoEventsError(ValidationError):
    """Operation requires at least one observed event."""


class ConvergenceError(CoxselError):
    """An iterative solver ran out of budget; carries diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class MonotoneLikelihoodError(ConvergenceError):
    """Partial-likelihood maximizer drifting to infinity (monotone likelihood)."""


class SingularInformationError(CoxselError):
    """Information matrix is singular or the fit is over-parameterized."""


class DegenerateInformationError(CoxselError):
    """Scalar information for the exposure is numerically zero."""


class FoldingError(CoxselError):
    """Cross-validation folds cannot satisfy the event constraints."""
