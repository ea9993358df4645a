"""Exception hierarchy shared by all stackcast modules."""


class StackcastError(Exception):
    """Base class for every error raised by this package."""


class DomainError(StackcastError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class IngestionError(DomainError):
    """A forecast, truth or run file could not be parsed or validated."""


class UnsupportedError(DomainError):
    """The request is valid in principle but not supported by this routine."""


class RunError(StackcastError):
    """A season protocol could not be executed with the supplied data."""


class DegenerateColumnError(StackcastError, ArithmeticError):
    """Every component assigns zero probability to one observation."""
