"""Exception types shared across the package."""


class SaceBartError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(SaceBartError):
    """Invalid configuration value or malformed config file."""


class DataError(SaceBartError):
    """Base class for dataset ingestion/validation problems."""


class SchemaError(DataError):
    """Required column missing or a cell cannot be parsed."""


class ConsistencyError(DataError):
    """A row violates the observation-pattern invariants."""


class RandomizationError(DataError):
    """A cluster carries more than one treatment assignment."""


class PositivityError(DataError):
    """One of the trial arms has no clusters."""


class InitializationError(SaceBartError):
    """The sampler cannot be seeded (an observed cell required for
    initial model fits is empty)."""


class NumericalUnderflowError(SaceBartError):
    """A mixture cell lost all probability mass even after log-space
    stabilization; carries the offending individual index."""

    def __init__(self, message, individual=None, iteration=None):
        super().__init__(message)
        self.individual = individual
        self.iteration = iteration


class ContractViolation(SaceBartError):
    """An internal invariant was broken; indicates a programming error,
    not bad user input."""
