"""Exception types shared across the engine."""


class LatentDAError(Exception):
    """Base class for all engine errors."""


class DimensionError(LatentDAError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(LatentDAError, ValueError):
    """A value lies outside the domain of an operation (log of a negative, bad simplex, ...)."""


class NonFiniteError(LatentDAError, FloatingPointError):
    """NaN or Inf appeared where only finite values are allowed."""


class UsageError(LatentDAError, RuntimeError):
    """An API was called out of order, e.g. backward before forward."""


class ConfigError(LatentDAError, ValueError):
    """Invalid dataset spec or experiment configuration."""


class FormatError(LatentDAError, ValueError):
    """Malformed file contents (IDX, checkpoint, dataset)."""
