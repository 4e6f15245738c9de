"""Exception types shared across the package."""


class ComatchError(Exception):
    """Base class for all package errors."""


class FormatError(ComatchError):
    """A file or payload does not parse or violates its schema."""


class DataValidationError(ComatchError):
    """A domain object violates one of its invariants."""


class InsufficientDataError(ComatchError):
    """Not enough records to run an estimator."""


class CompletenessError(ComatchError):
    """A required per-sentence input is missing."""


class ConfigError(ComatchError):
    """Invalid configuration value or lookup."""


class NumericError(ComatchError):
    """Non-finite or degenerate numeric input reached a computation."""


class DegenerateVectorWarning(UserWarning):
    """An all-zero embedding was handled by a documented fallback."""


class DegenerateDataWarning(UserWarning):
    """Data is usable but thinner than an estimator expects."""
