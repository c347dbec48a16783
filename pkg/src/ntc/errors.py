"""Exception hierarchy shared by the library and the command line."""


class NTCError(Exception):
    """Base class for all errors raised by ``ntc``."""

    exit_code = 1


class ParameterError(NTCError, ValueError):
    """Shapes, channel counts or configuration values are inconsistent."""

    exit_code = 2


class UsageError(NTCError, RuntimeError):
    """An API was called out of order (e.g. a stale forward record)."""

    exit_code = 2


class CorruptStreamError(NTCError, ValueError):
    """A bitstream or model container could not be decoded."""

    exit_code = 3


class NumericError(NTCError, FloatingPointError):
    """A computation produced a non-finite or otherwise invalid value."""

    exit_code = 4

    def __init__(self, message, term=None):
        super().__init__(message)
        self.term = term
