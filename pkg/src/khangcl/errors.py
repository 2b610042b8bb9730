"""Exception types shared across the package."""


class KhanError(Exception):
    """Base class for all errors raised by khangcl."""


class ShapeError(KhanError, ValueError):
    """Array dimensions are inconsistent with what an operation expects."""


class ConvergenceError(KhanError, ArithmeticError):
    """An iterative solver exhausted its iteration budget."""


class ConfigError(KhanError, ValueError):
    """A hyperparameter or configuration value is out of range."""


class DataError(KhanError):
    """A dataset file is missing or malformed."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
