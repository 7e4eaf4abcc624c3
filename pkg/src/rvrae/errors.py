class ConfigError(ValueError):
    """Invalid configuration value."""


class AlignmentError(ValueError):
    """Sequences or panels are not aligned in time or cross-section."""


class UndefinedMetricError(ArithmeticError):
    """A metric is undefined for the given input (zero variance, all ties, ...)."""


class IncompatibleError(ValueError):
    """A checkpoint does not fit the data or configuration it is used with."""
