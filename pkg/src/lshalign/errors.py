"""Exception hierarchy shared by every stage of the aligner."""


class LshAlignError(Exception):
    """Base class for all package errors."""

    exit_code = 2


class ParseError(LshAlignError, ValueError):
    """Malformed input file."""

    exit_code = 1

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(LshAlignError, ValueError):
    """Input values outside what an operation accepts."""

    exit_code = 1


class ConfigError(LshAlignError, ValueError):
    """Inconsistent parameters, shapes, or mismatched artifacts."""

    exit_code = 1


class EmptyInputError(ValidationError):
    """Not enough data to form a single epoch, window, or index."""


class NumericError(LshAlignError, ArithmeticError):
    """A NaN or infinity appeared in a computation."""

    exit_code = 2
