"""Exception types shared across the package."""


class PathTaylorError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PathTaylorError, ValueError):
    """Invalid grid, index, or experiment configuration."""


class QueryError(PathTaylorError, ValueError):
    """A query refers to times, points or indices outside the admissible set."""


class CapabilityError(PathTaylorError):
    """A functional or coefficient set cannot supply the requested derivative."""


class ConsistencyError(PathTaylorError):
    """Two routes to the same quantity disagree beyond tolerance."""
