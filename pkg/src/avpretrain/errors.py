"""Error taxonomy shared across the package.

The CLI maps these to exit codes: ConfigError -> 2, NumericError -> 3.
Argument/shape/contract violations use plain ValueError.
"""


class ConfigError(ValueError):
    """Malformed, inconsistent, or unknown configuration input."""


class NumericError(RuntimeError):
    """Non-finite values or numerically invalid inputs encountered mid-run."""


class ProtocolError(ValueError):
    """An evaluation protocol precondition was violated (ids, splits, labels)."""
