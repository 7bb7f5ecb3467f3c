"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array shapes or dimensions incompatible with an operation."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class ConfigError(ValueError):
    """Invalid configuration value. CLI maps this to exit code 2."""


class DataError(ValueError):
    """Malformed data fed to a numeric routine (e.g. unnormalized rows)."""


class NumericsError(RuntimeError):
    """Training hit NaN/Inf. CLI maps this to exit code 3."""
