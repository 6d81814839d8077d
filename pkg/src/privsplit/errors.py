"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: configuration problems exit 2, data
problems exit 3, anything else 4.
"""


class PrivSplitError(Exception):
    """Base class for all library errors."""


class ConfigError(PrivSplitError):
    """Invalid configuration value or hyperparameter."""


class DimensionError(ConfigError, ValueError):
    """Tensor or layer shapes do not line up."""


class StructureError(ConfigError):
    """A graph rewrite or mirror is not defined for the given structure."""


class ParseError(ConfigError):
    """Malformed strategy string or config document."""


class DataError(PrivSplitError):
    """Dataset is empty or lacks required labels."""


class UsageError(PrivSplitError, RuntimeError):
    """API called in an invalid state (e.g. backward on a non-scalar)."""


class DegenerateModelError(PrivSplitError):
    """Model has no parameters or MACs to normalize against."""


class FormatError(PrivSplitError):
    """Persisted file is corrupt or of an unknown version."""


class NumericalError(PrivSplitError, FloatingPointError):
    """A forward op produced non-finite values."""
