"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Bad or incomplete run configuration."""


class DivergenceError(FloatingPointError):
    """Explicit time integration produced non-finite values."""


class ConvergenceError(RuntimeError):
    """An iterative solver or pruning loop did not reach a usable result.

    ``diagnostics`` carries whatever the failing routine knew at the time
    (last iterate, iteration count, last non-empty term set, ...).
    """

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics
