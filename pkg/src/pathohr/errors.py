"""Exception types shared across the pipeline."""


class PathoHRError(Exception):
    """Base class for all pipeline errors."""


class DimensionError(PathoHRError, ValueError):
    """Shapes of the operands do not line up."""


class EmptyInputError(PathoHRError, ValueError):
    """An operation received an empty image, grid, or token set."""


class MergeNotApplicable(PathoHRError, ValueError):
    """Token merging requested on fewer than two tokens, or r out of range."""


class NumericError(PathoHRError, ArithmeticError):
    """A numeric quantity that must be finite was NaN or infinite."""


class TrainingDiverged(NumericError):
    """The training loss became non-finite."""


class UndefinedMetric(PathoHRError, ValueError):
    """Metric is undefined for this input (e.g. single-class AUC)."""


class FormatError(PathoHRError, ValueError):
    """A serialized file has a bad magic, truncated payload, or invalid header."""


class ConfigError(PathoHRError, ValueError):
    """Inconsistent or out-of-range configuration values."""
