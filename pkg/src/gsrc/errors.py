"""Exception types shared across the package."""


class GSRCError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ValidationError(GSRCError, ValueError):
    """Bad parameters, shapes or configuration values."""

    exit_code = 2


class PrerequisiteError(GSRCError):
    """A required artifact from an earlier pipeline stage is missing."""

    exit_code = 3


class DivergenceError(GSRCError, ArithmeticError):
    """State norm exceeded the overflow guard or became non-finite."""

    exit_code = 4

    def __init__(self, message, step=None, time=None):
        super().__init__(message)
        self.step = step
        self.time = time


class ConvergenceError(GSRCError, ArithmeticError):
    """An iterative scheme hit its iteration cap."""

    exit_code = 5


class SingularSystemError(GSRCError, ArithmeticError):
    """Linear system is singular (typically ridge with beta = 0)."""

    exit_code = 5
