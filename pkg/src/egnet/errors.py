"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An input violates a structural contract (duplicates, bad config, ...)."""


class DimensionError(ValidationError):
    """Array shapes or sizes do not line up."""


class TrainingError(RuntimeError):
    """Raised when optimisation produces a non-finite loss."""
