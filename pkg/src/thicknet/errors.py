"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
NumericError (including training divergence) -> 3, FormatError -> 4.
"""


class ThickNetError(Exception):
    """Base class for all thicknet errors."""


class DimensionError(ThickNetError):
    """Operand shapes are incompatible for the requested operation."""


class ArgumentError(ThickNetError):
    """An argument is out of its documented domain (empty stack, bad label, ...)."""


class NumericError(ThickNetError):
    """A non-finite value appeared where the contract requires finite numbers."""


class DivergenceError(NumericError):
    """Training loss became non-finite; carries the step where it happened."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class StateError(ThickNetError):
    """Stateful object used before it was initialized (e.g. BN eval before train)."""


class FormatError(ThickNetError):
    """A binary file does not match its declared layout; carries a byte offset."""

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class ConfigError(ThickNetError):
    """An experiment configuration is invalid; raised before any compute."""
