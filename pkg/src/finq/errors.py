"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class FinqError(Exception):
    exit_code = 1


class UsageError(FinqError):
    exit_code = 2


class ConfigurationError(UsageError):
    pass


class ParameterError(UsageError, ValueError):
    pass


class DataError(FinqError, ValueError):
    exit_code = 3


class DimensionError(DataError):
    pass


class RangeError(DataError):
    pass


class CapacityError(FinqError):
    exit_code = 4


class ConvergenceError(FinqError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
