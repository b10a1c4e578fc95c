"""Exception types shared across the package."""


class EntedError(Exception):
    """Base class for package-specific errors."""


class ShapeError(EntedError):
    """Incompatible tensor shapes or axes; the message names both sides."""


class ConfigError(EntedError):
    """Invalid, unknown, or inconsistent configuration values."""


class CheckpointError(EntedError):
    """Malformed checkpoint file or a resume that does not match it."""
