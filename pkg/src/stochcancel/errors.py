"""Exception hierarchy shared by the library and the command line."""


class StochCancelError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(StochCancelError, ValueError):
    """Invalid configuration or invalid arguments to a builder."""

    exit_code = 2


class ResourceCeilingError(StochCancelError):
    """Requested computation exceeds a configured size limit."""

    exit_code = 3


class NumericalDiagnosticError(StochCancelError, ArithmeticError):
    """A numerical routine failed to certify its result.

    ``residual`` carries the best accuracy estimate reached, when known.
    """

    exit_code = 4

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
