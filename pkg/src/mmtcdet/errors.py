class ConfigError(ValueError):
    """Invalid configuration value."""


class NumericalError(ArithmeticError):
    """A non-finite value appeared where a finite one is required."""
