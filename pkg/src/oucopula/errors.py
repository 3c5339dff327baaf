"""Exception hierarchy shared across the package.

Exit-code mapping used by the command line front end:
usage problems -> 1, data/format problems -> 2, numerical failures -> 3.
"""


class OUCopulaError(Exception):
    """Base class for all package errors."""


class ShapeError(OUCopulaError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class FormatError(OUCopulaError, ValueError):
    """A file, container, or manifest does not match its documented layout."""


class NumericalError(OUCopulaError, ArithmeticError):
    """A computation produced or received non-finite or degenerate values."""


class EstimationError(NumericalError):
    """Copula parameter estimation rejected its input."""


class ConfigError(OUCopulaError, ValueError):
    """A configuration value violates its documented invariant."""
