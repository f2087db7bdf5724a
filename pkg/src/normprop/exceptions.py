"""Exception hierarchy.

Every error carries a short ``category`` token so the CLI can report a single
machine-parsable line on failure.
"""


class NormPropError(Exception):
    category = "error"


class DimensionError(NormPropError, ValueError):
    category = "dimension"


class NormalizationError(NormPropError, ValueError):
    category = "normalization"


class ConfigurationError(NormPropError, ValueError):
    category = "configuration"


class UnsupportedConfigurationError(ConfigurationError):
    category = "unsupported-configuration"


class DataError(NormPropError, ValueError):
    category = "data"


class FormatError(DataError):
    category = "format"


class InsufficientDataError(DataError):
    category = "insufficient-data"


class EvaluationError(NormPropError, ArithmeticError):
    category = "evaluation"


class StateError(NormPropError, RuntimeError):
    category = "state"


class DivergenceError(NormPropError, ArithmeticError):
    category = "divergence"

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good
