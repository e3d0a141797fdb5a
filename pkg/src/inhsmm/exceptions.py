"""Exception types raised by inhsmm."""


class DomainError(ValueError):
    """An argument lies outside the support or domain of a function."""


class ConfigurationError(ValueError):
    """A model or run configuration is structurally invalid."""


class DataError(ValueError):
    """Observation data cannot be used as given."""


class NumericalError(RuntimeError):
    """A numerical routine failed (singular system, non-finite values, ...)."""


class UnsupportedOperation(RuntimeError):
    """The operation is not defined for this kind of model."""
