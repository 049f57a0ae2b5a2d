"""Exception hierarchy shared by every module.

The CLI maps these onto fixed exit codes, so each class carries its own.
"""


class QuickTransferError(Exception):
    exit_code = 1


class ConfigError(QuickTransferError, ValueError):
    exit_code = 2


class DataError(QuickTransferError, ValueError):
    exit_code = 2


class ParseError(DataError):
    pass


class ValidationError(DataError):
    pass


class DomainError(ConfigError):
    """A scalar argument lies outside the domain of the function."""


class PlanError(QuickTransferError, ValueError):
    exit_code = 3


class CoverageError(DataError):
    """A class has no samples in one of the domains."""

    exit_code = 4

    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = list(missing)


class ShapeError(QuickTransferError, ValueError):
    exit_code = 5


class NumericError(QuickTransferError, ArithmeticError):
    exit_code = 1


class TrainingError(NumericError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class ConvergenceError(NumericError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
