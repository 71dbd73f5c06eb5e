"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes, so keep the classes coarse.
"""


class SpcltError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(SpcltError, ValueError):
    """Invalid configuration, shapes or hyperparameters."""


class ContractViolation(SpcltError, ValueError):
    """A documented precondition on an argument does not hold."""


class NumericError(SpcltError, ArithmeticError):
    """A computation produced or received a non-finite value."""


class NumericDomainError(NumericError):
    """An operation was evaluated outside its mathematical domain."""

    def __init__(self, op: str, message: str = ""):
        self.op = op
        super().__init__(f"{op}: {message}" if message else op)


class ParseError(SpcltError, ValueError):
    """Malformed text input. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class FormatError(SpcltError, ValueError):
    """Malformed binary artifact."""
