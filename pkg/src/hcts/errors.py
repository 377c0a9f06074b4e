"""Exception types shared across the package.

The CLI maps these onto its exit codes: UsageError -> 1, DataError -> 2,
NumericFailure -> 3.
"""


class HCTSError(Exception):
    exit_code = 1


class UsageError(HCTSError, ValueError):
    exit_code = 1


class DataError(HCTSError):
    exit_code = 2


class NumericFailure(HCTSError, ArithmeticError):
    """Raised when a NaN/Inf shows up. ``component`` names the offender."""

    exit_code = 3

    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class InvariantViolation(UsageError):
    pass
