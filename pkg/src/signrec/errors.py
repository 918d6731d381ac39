"""Exception hierarchy shared across the package.

Exit codes follow the CLI contract: 2 for configuration/parse problems,
3 for data problems, 4 for numerical failures.
"""


class SignRecError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(SignRecError):
    """Invalid parameter, option, or model configuration."""

    exit_code = 2


class ParseError(ConfigError):
    """Malformed input file (word vectors, manifest, config)."""


class ShapeError(ConfigError):
    """Incompatible tensor shapes."""


class DataError(SignRecError):
    """Missing or inconsistent data (files, clip lengths, splits)."""

    exit_code = 3


class CropError(DataError):
    """Degenerate crop rectangle."""


class NumericalError(SignRecError):
    """Non-finite values encountered where finite ones are required."""

    exit_code = 4
