"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An operation was called with arguments violating its preconditions."""


class ConfigError(ValueError):
    """Invalid configuration: bad value, unknown key, or inconsistent dims."""


class NumericalError(RuntimeError):
    """A numerical failure (NaN/Inf loss, degenerate covariance, ...)."""


class CheckpointError(RuntimeError):
    """Checkpoint file is unreadable, corrupt, or version-incompatible."""
