"""Exception types shared across the package.

The CLI maps these onto process exit codes, so raising the right class
matters: ConfigError -> 2, file/format problems -> 3, NumericalError -> 4.
"""


class SatDeblurError(Exception):
    """Base class for all package errors."""


class ShapeError(SatDeblurError, ValueError):
    """Array shapes are inconsistent or invalid for the operation."""


class KernelError(SatDeblurError, ValueError):
    """Kernel violates its invariants (size, sign, normalization)."""


class ConfigError(SatDeblurError, ValueError):
    """Invalid configuration value or unknown configuration key."""


class FormatError(SatDeblurError, ValueError):
    """A file does not conform to its declared binary/text format."""


class NumericalError(SatDeblurError, RuntimeError):
    """A solver produced non-finite values; carries the iteration index."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration
