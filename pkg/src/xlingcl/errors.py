"""Exception types shared across the package.

The CLI maps these onto distinct exit codes (config 2, data 3, numeric 4).
"""


class XlingclError(Exception):
    """Base class for package errors."""


class ConfigError(XlingclError):
    """Invalid configuration: bad field values, unknown config keys, bad flags."""


class DataError(XlingclError):
    """Invalid or insufficient data: empty corpora, missing qrels, bad files."""


class NumericError(XlingclError):
    """Numerical failure: non-finite loss or gradient during training."""


class DegenerateInputError(NumericError):
    """Degenerate numeric input, e.g. a zero-norm vector fed to cosine similarity."""
