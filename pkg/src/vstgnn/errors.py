"""Exception types shared across the pipeline."""


class ValidationError(ValueError):
    """Input violates a documented precondition."""


class ShapeError(ValueError):
    """Array or tensor shape does not match the configured contract."""


class ConfigError(ValueError):
    """Configuration is internally inconsistent or names an unknown key."""


class FetchError(RuntimeError):
    """Archive backend could not deliver data. Safe to retry."""


class NonFiniteLossError(RuntimeError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, message: str, *, epoch: int, batch: int, param_norms: dict[str, float]):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.param_norms = param_norms
