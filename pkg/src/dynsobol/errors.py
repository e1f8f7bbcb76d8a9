"""Exception hierarchy.

Numerical failures (a violated modelling hypothesis, a solver that did not
converge) derive from :class:`NumericalError`; bad user input derives from
:class:`ConfigError`.  The CLI maps the first family to exit code 1 and the
second to exit code 2.
"""

from __future__ import annotations


class DynSobolError(Exception):
    """Base class for every error raised by this package."""


class NumericalError(DynSobolError):
    """A numerical hypothesis is violated or a solver failed."""


class NonStationaryError(NumericalError):
    """The VAR model has a companion spectral radius >= 1."""

    def __init__(self, radius: float, message: str | None = None):
        self.radius = float(radius)
        super().__init__(message or f"model is not stationary: spectral radius {radius:.6g} >= 1")


class FullRankError(NumericalError):
    """The past covariance of the frozen coordinate is not positive definite."""


class ConvergenceError(NumericalError):
    """An iterative solver exceeded its step budget or an eigen-solve failed."""


class DegenerateOutputError(NumericalError):
    """The model output has zero empirical variance."""


class NonFiniteOutputError(NumericalError):
    """The model function returned NaN or infinite values."""

    def __init__(self, sample: int, t: int, replica: int = 1):
        self.sample, self.t, self.replica = sample, t, replica
        super().__init__(f"non-finite model output at sample {sample}, t={t} (replica {replica})")


class ConfigError(DynSobolError):
    """Invalid configuration, file or argument."""


class DataError(ConfigError):
    """Malformed measurement data (unparseable rows, gaps, degenerate hours)."""
