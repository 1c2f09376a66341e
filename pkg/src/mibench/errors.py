"""Exception hierarchy shared across the package.

The CLI maps exception classes to exit codes: configuration and model
specification problems exit with 2, data/container problems with 3,
numeric failures (NaN/Inf during training) with 4.
"""


class MibenchError(Exception):
    exit_code = 1


class ConfigError(MibenchError):
    """Invalid run configuration or command-line usage."""

    exit_code = 2


class SpecError(ConfigError):
    """Malformed or inconsistent model specification."""


class BuildError(ConfigError):
    """A model cannot be assembled (shape or group bookkeeping failed)."""


class DataError(MibenchError):
    """Problems with trial containers or converted input files."""

    exit_code = 3


class BadMagicError(DataError):
    """File does not start with the expected magic bytes."""


class TruncatedError(DataError):
    """File ends before the declared payload is complete."""


class LabelRangeError(DataError):
    """A trial label is outside the supported class range."""


class NumericError(MibenchError):
    """Non-finite values were produced where finite ones are required."""

    exit_code = 4
