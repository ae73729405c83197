"""Exception types shared across the package.

Each class carries the exit code the CLI uses when the error escapes to
the process boundary.
"""


class BayesinvError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class SpecSchemaError(BayesinvError, ValueError):
    """A config/spec document violates the documented schema."""

    exit_code = 3


class MissingFileError(BayesinvError, FileNotFoundError):
    """A required input file does not exist."""

    exit_code = 4


class DimensionMismatchError(BayesinvError, ValueError):
    """Vector/operator dimensions disagree."""

    exit_code = 5

    @classmethod
    def expected(cls, what, expected, actual):
        return cls(f"{what}: expected length {expected}, got {actual}")


class ParameterError(BayesinvError, ValueError):
    """A scalar parameter is outside its valid range."""

    exit_code = 6


class BatchError(BayesinvError, ValueError):
    """Batch members disagree in count or shape."""

    exit_code = 5


class ConditioningError(BayesinvError, RuntimeError):
    """A factorization failed; the system is numerically singular."""

    exit_code = 7


class DivergenceError(BayesinvError, RuntimeError):
    """Training produced a non-finite loss.

    Carries the epoch index and the loss breakdown at failure.
    """

    exit_code = 8

    def __init__(self, message, epoch=None, breakdown=None):
        super().__init__(message)
        self.epoch = epoch
        self.breakdown = breakdown
