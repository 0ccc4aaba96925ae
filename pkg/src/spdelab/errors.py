"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class SpdeLabError(Exception):
    """Base class for every error raised by this package."""


class ModelError(SpdeLabError, ValueError):
    """Invalid covariance model, kernel or grid parameters."""


class TableRangeError(SpdeLabError, ValueError):
    """Tabulated function queried outside its table (no extrapolation)."""


class SingularityError(SpdeLabError, ValueError):
    """Covariance density evaluated at its singular point."""


class InconclusiveError(SpdeLabError):
    """A truncated integral did not converge and no tail bound was available."""


class DivergenceError(SpdeLabError):
    """An integral that must be finite was diagnosed as divergent."""


class ToleranceExceededError(SpdeLabError):
    """Two independent evaluations of the same quantity disagree."""


class FactorizationError(SpdeLabError):
    """Dense covariance factorization failed."""

    def __init__(self, message: str, min_eigenvalue: float):
        super().__init__(f"{message} (smallest eigenvalue {min_eigenvalue:.3e})")
        self.min_eigenvalue = min_eigenvalue


class RegularityError(SpdeLabError, ValueError):
    """Initial data does not satisfy the regularity the kernel requires."""


class InadmissibleError(SpdeLabError):
    """Noise/kernel pair fails the integrability condition."""

    def __init__(self, message: str, diagnosis: object = None):
        super().__init__(message)
        self.diagnosis = diagnosis


class ConvergenceError(SpdeLabError):
    """Picard iteration hit max_iter without meeting its tolerance."""

    def __init__(self, message: str, log: list[float]):
        super().__init__(message)
        self.log = log


class ConfigError(SpdeLabError, ValueError):
    """Experiment configuration is malformed or violates the schema."""
