"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain where an operation is defined."""


class StabilityError(DomainError):
    """A productivity matrix or kernel violates the subcriticality condition."""


class ConfigError(Exception):
    """Invalid or inconsistent run configuration."""


class DataError(Exception):
    """Malformed or inconsistent input data."""


class OptimizerError(RuntimeError):
    """Every optimizer start failed to produce a finite log-likelihood."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class SimulationError(RuntimeError):
    """A sampler could not proceed (e.g. the intensity bound overflowed)."""
