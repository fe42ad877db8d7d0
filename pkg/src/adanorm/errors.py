"""Exception hierarchy.

Two families map onto CLI exit codes: ``DataError`` (degenerate or invalid
inputs, exit code 3) and ``NumericError`` (numerical failure, exit code 4).
"""


class AdanormError(Exception):
    """Base class for all package errors."""


class DataError(AdanormError, ValueError):
    """Invalid or degenerate input data."""


class NumericError(AdanormError, ArithmeticError):
    """A numerical routine could not produce a result."""


class DomainError(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class InvalidNorm(DataError):
    pass


class InsufficientData(DataError):
    pass


class DegenerateOutcome(DataError):
    pass


class DegenerateCovariate(DataError):
    pass


class DegenerateVariance(DataError):
    pass


class EmptyStratum(DataError):
    pass


class EmptyInput(DataError):
    pass


class PoleInput(DataError):
    pass


class InvalidSetting(DataError):
    pass


class NonPositiveSmoother(DataError):
    pass


class NotPositiveDefinite(NumericError):
    pass


class Separation(NumericError):
    pass


class ExperimentAborted(NumericError):
    """Too many simulation replicates failed."""
