"""Error types shared across the package.

The CLI maps these onto exit codes: ``InputFormatError`` -> 2,
``ConfigError`` -> 3, anything else -> 1.  Both derive from ``ValueError``
so library users can catch validation failures uniformly.
"""


class RadarMrfError(ValueError):
    """Base class for all errors raised by this package."""


class InputFormatError(RadarMrfError):
    """A file or record on disk is malformed (wrong size, bad JSON, ...)."""


class ConfigError(RadarMrfError):
    """A configuration value is missing or inconsistent."""
