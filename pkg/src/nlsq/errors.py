"""Exception hierarchy shared by every module and mapped to CLI exit codes."""


class NlsqError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(NlsqError, ValueError):
    """Invalid parameters, malformed configs, violated preconditions."""

    exit_code = 2


class NumericalError(NlsqError, ArithmeticError):
    """A numerical method failed: indefiniteness, divergence, under-resolution."""

    exit_code = 3


class ResourceError(NlsqError):
    """A request exceeds the configured size budget."""

    exit_code = 4
