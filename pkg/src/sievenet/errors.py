"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value (bad probability, empty cohort, unknown case id, ...)."""


class NumericalError(ArithmeticError):
    """Non-finite intermediate during a likelihood or gradient evaluation.

    ``record_index`` points at the offending record within the batch that
    triggered the failure, or is None when the failure is not attributable
    to a single record.
    """

    def __init__(self, message: str, record_index: int | None = None):
        super().__init__(message)
        self.record_index = record_index


class CalibrationError(RuntimeError):
    """Study-end-time calibration failed to bracket or converge."""


class TrainingDivergenceError(RuntimeError):
    """Training left the region where the likelihood is numerically meaningful."""
