"""Exception types shared across the library."""


class DimensionError(ValueError):
    """Operand shapes are incompatible and not trailing-axis broadcastable."""


class ContractError(ValueError):
    """An operation was called outside its documented contract."""


class ConfigError(ValueError):
    """Invalid model or experiment configuration."""


class FormatError(ValueError):
    """A data file does not match the expected binary layout."""


class SingularRatioError(ValueError):
    """A normalization gain entry is exactly zero, making the ratio undefined."""
