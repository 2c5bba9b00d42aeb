"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or spec combination."""


class ValidationError(ValueError):
    """Malformed input to a numerical routine."""


class UsageError(RuntimeError):
    """An operation was called in a state where it is not allowed."""


class IntegrityError(RuntimeError):
    """Data or parameter integrity was violated (digests, episode ordering)."""
