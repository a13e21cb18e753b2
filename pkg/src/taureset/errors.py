"""Exception taxonomy shared by every stage.

Three failure families map onto the CLI exit codes: configuration and
argument problems (2), input-data problems (3), numerical breakdowns (4).
"""
from __future__ import annotations


class PipelineError(Exception):
    exit_code = 1


class ValidationError(PipelineError):
    """Bad configuration, arguments, or shapes."""

    exit_code = 2


class DataError(PipelineError):
    """Missing, malformed, or inconsistent input data."""

    exit_code = 3


class NumericalError(PipelineError):
    """Non-finite values or a failed numerical procedure."""

    exit_code = 4


# --- data layer ---------------------------------------------------------

class MalformedRecord(DataError):
    pass


class EmptyFile(DataError):
    pass


class UnsortedInput(DataError):
    pass


class EmptyRange(DataError):
    pass


class EmptySeries(DataError):
    pass


class NetworkError(DataError):
    pass


class PaginationGap(DataError):
    pass


class LookbackUnderflow(DataError):
    pass


class InsufficientHistory(DataError):
    pass


class MissingEpoch(DataError):
    pass


class EpochMismatch(DataError):
    pass


class RowSumViolation(DataError):
    pass


class PeriodMismatch(DataError):
    pass


# --- configuration / domain preconditions -------------------------------

class OutOfPartition(ValidationError):
    pass


class DegenerateBucket(ValidationError):
    pass


class EmptyPath(ValidationError):
    pass


class SupportClipped(ValidationError):
    pass


class ZeroPoolLiquidity(ValidationError):
    pass


class TooFewRows(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


# --- numerics ------------------------------------------------------------

class NonfiniteResult(NumericalError):
    pass


class NonfiniteWeight(NumericalError):
    pass


class NonfiniteLoss(NumericalError):
    pass


# --- run outcomes ---------------------------------------------------------

class CapitalDepleted(PipelineError):
    """Strategy capital hit zero; the run stops but still reports."""

    exit_code = 1
