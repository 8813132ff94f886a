"""Exception hierarchy shared by the compute modules and the CLI."""


class QDIError(Exception):
    """Base class for all errors raised by qdinterference."""

    exit_code = 3


class ConfigError(QDIError, ValueError):
    """Invalid or inconsistent run configuration."""

    exit_code = 1


class DataError(QDIError, ValueError):
    """Malformed or physically invalid input data."""

    exit_code = 2


class NumericalError(QDIError, RuntimeError):
    """A numerical procedure failed (integrator, optimizer, ...)."""

    exit_code = 3


class DimensionError(QDIError, ValueError):
    """Requested Hilbert-space dimension exceeds the supported cap."""

    exit_code = 1


class ZeroIntensityError(DataError):
    """A collective mode carries no steady-state intensity."""


class GridError(DataError):
    """Sampling grid is non-uniform, too coarse, or mismatched."""


class FitError(NumericalError):
    """Joint fit did not converge."""


class ModelAssumptionError(NumericalError):
    """A closed-form model produced a non-physical value."""
