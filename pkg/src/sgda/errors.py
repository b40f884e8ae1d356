"""Exception types shared across the package."""


class SgdaError(Exception):
    """Base class for all package errors."""


class ConfigError(SgdaError, ValueError):
    """Invalid configuration (bad ranges, unknown keys, too many properties...)."""


class InputError(SgdaError, ValueError):
    """An operation received arguments outside its contract."""


class EvaluationError(SgdaError, KeyError):
    """A formula references a signal the signal table does not provide."""

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""
