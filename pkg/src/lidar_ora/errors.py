"""Exception types shared across the toolkit."""


class OraError(Exception):
    """Base class for all toolkit errors."""


class FormatError(OraError, ValueError):
    """Input does not follow the expected file layout (field counts, keys, sizes)."""


class DataError(OraError, ValueError):
    """Input is well-formed but carries invalid values (NaN, singular matrix, ...)."""


class GeometryError(OraError, ValueError):
    """A geometric quantity is undefined, e.g. the direction of a zero-length ray."""


class AmbiguityError(OraError, ValueError):
    """Target objects cannot be attacked independently because they share points."""


class ConfigError(OraError, ValueError):
    """Invalid attack, proxy or run configuration."""
