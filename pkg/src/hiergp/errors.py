"""Exception types shared across the package."""


class HierGPError(Exception):
    """Base class for errors raised by hiergp."""


class InvalidParameterError(HierGPError, ValueError):
    """A distribution or model parameter is outside its valid range."""


class NumericalError(HierGPError, ArithmeticError):
    """A factorization or update failed even after stabilization."""


class ConfigError(HierGPError, ValueError):
    """An experiment configuration is malformed or inconsistent."""
