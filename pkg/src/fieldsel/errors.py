"""Exception hierarchy. The CLI maps each family to an exit code."""


class FieldselError(Exception):
    """Base class for toolkit errors."""


class ConfigError(FieldselError, ValueError):
    """Invalid configuration or argument (usage error)."""


class DataError(FieldselError, ValueError):
    """Malformed or inconsistent input data."""


class NumericError(FieldselError, ArithmeticError):
    """Non-finite value, failed convergence or a missing descent direction."""


class SingleClassError(DataError):
    """AUC is undefined because only one class is present.

    The log loss is still computed and carried on the exception.
    """

    def __init__(self, message, logloss):
        super().__init__(message)
        self.logloss = logloss
