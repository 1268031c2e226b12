"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or input contract violation (CLI exit code 2)."""


class NumericsError(RuntimeError):
    """Numerical failure: NaN, divergence, lost conservation (CLI exit code 3)."""
