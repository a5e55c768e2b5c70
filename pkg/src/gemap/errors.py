"""Exception hierarchy shared across the package."""


class GemapError(Exception):
    """Base class for all gemap errors."""


class ParseError(GemapError):
    """A trace/profile/mapping file could not be parsed."""


class ValidationError(GemapError):
    """Parsed or constructed data violates a domain invariant."""


class DimensionError(ValidationError):
    """Trace, profile, and mapping dimensions do not agree."""


class GenerationError(GemapError):
    """A synthetic-data spec is over-constrained and cannot be realized."""
