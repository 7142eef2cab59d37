"""Exception types raised across the package."""


class BSSError(Exception):
    """Base class for all package errors."""


class InputError(BSSError, ValueError):
    """An argument violates an operation's precondition."""


class DegenerateInputError(InputError):
    """Input is well-typed but degenerate (e.g. a zero-norm vector)."""


class ParseError(BSSError, ValueError):
    """A serialized file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FormatError(ParseError):
    """A serialized file parsed but disagrees with its own header."""
