class ConfigError(ValueError):
    """A scenario or model configuration violates one of its invariants."""


class EstimatorError(RuntimeError):
    """An estimator cannot be fitted on the data it was given."""


class RankDeficientError(ValueError):
    """The design matrix is collinear; ``column`` names the offending column."""

    def __init__(self, column: int | str, message: str | None = None):
        self.column = column
        super().__init__(message or f"design matrix is rank deficient at column {column!r}")
