"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Shapes or spatial sizes are incompatible with the requested operation."""


class DomainError(ValueError):
    """A numeric input lies outside the valid domain of an operation."""


class ConfigError(ValueError):
    """A configuration document is malformed or contains unknown keys."""

    def __init__(self, message: str, keys: tuple = ()):
        super().__init__(message)
        self.keys = tuple(keys)


class CheckpointVersionError(RuntimeError):
    """A checkpoint file uses an unsupported format version."""


class NonFiniteLossError(RuntimeError):
    """Training produced a NaN or infinite loss value."""
