"""Exception types raised across the package.

All of them subclass :class:`ValueError` so callers that only care about
"bad input" can catch that.
"""


class RandconError(ValueError):
    """Base class for package errors."""


class ParseError(RandconError):
    """Malformed input file."""


class DimensionError(RandconError):
    """Array shapes that violate a size requirement."""


class ParameterError(RandconError):
    """Invalid argument value or combination."""


class DegenerateError(RandconError):
    """Input for which the requested quantity is undefined."""


class FormatError(RandconError):
    """Binary container that is corrupt or from an incompatible version."""
