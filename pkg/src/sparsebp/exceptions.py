"""Exception types shared across the package."""


class SparsebpError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SparsebpError, ValueError):
    """An array has incompatible or invalid dimensions."""


class FormatError(SparsebpError, ValueError):
    """A binary file (IDX, CIFAR batch, checkpoint) is malformed."""


class ConfigError(SparsebpError, ValueError):
    """An experiment config failed validation.

    ``fields`` lists the offending keys so a CLI can report them all at once.
    """

    def __init__(self, message: str, fields: list[str] | None = None):
        super().__init__(message)
        self.fields = list(fields or [])


class NumericError(SparsebpError, ArithmeticError):
    """A training run produced a non-finite value."""
