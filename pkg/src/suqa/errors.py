"""Exception hierarchy shared by every module."""


class SuqaError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""

    exit_code = 1


class InvalidArgument(SuqaError, ValueError):
    exit_code = 2


class ParseError(SuqaError, ValueError):
    exit_code = 3


class UndefinedMetric(SuqaError, ValueError):
    exit_code = 2


class InvalidState(SuqaError, RuntimeError):
    exit_code = 4


class RewardUnavailable(SuqaError, RuntimeError):
    """A model-backed scorer could not be reached; training must stop."""

    exit_code = 5


class ProtocolError(RewardUnavailable):
    """The remote peer answered, but not with what the wire format promises."""

    exit_code = 5
