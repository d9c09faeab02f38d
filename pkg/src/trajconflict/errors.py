"""Exception hierarchy. The CLI maps each family onto an exit code."""


class TrajConflictError(Exception):
    exit_code = 1


class ConfigError(TrajConflictError):
    """Invalid configuration or usage."""


class SchemaError(TrajConflictError):
    """Input table lacks a required column."""

    exit_code = 2


class DataError(TrajConflictError):
    """Input values violate the data contract."""

    exit_code = 2


class SplitError(DataError):
    pass


class FitError(DataError):
    pass


class TrainingError(TrajConflictError):
    """Numerical failure during optimization."""

    exit_code = 3

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
