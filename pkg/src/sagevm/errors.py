"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class SageError(Exception):
    exit_code = 1


class ConfigError(SageError, ValueError):
    exit_code = 2


class CapabilityError(SageError):
    """Requested operation is unavailable for these inputs (missing sidecar, grid too big...)."""

    exit_code = 2


class ShapeError(SageError, ValueError):
    exit_code = 2


class ContractError(SageError, ValueError):
    exit_code = 2


class NumericalError(SageError, ArithmeticError):
    exit_code = 3


class DivergenceError(NumericalError):
    """Non-finite state during sampling or training.

    ``step`` is the offending step index; training attaches the last finite
    parameter vector as ``last_good``.
    """

    def __init__(self, message, step, last_good=None):
        super().__init__(message)
        self.step = step
        self.last_good = last_good


class FormatError(SageError, OSError):
    exit_code = 4
