"""
Exception hierarchy for the lab.
The CLI maps ConfigError and the resolution errors to exit code 2.
"""


class LabError(Exception):
    """Base class for every error raised by the lab."""


class ConfigError(LabError):
    """Malformed or invalid experiment configuration."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if field is not None:
            prefix += f"{field}: "
        super().__init__(prefix + message)


class UnsupportedError(LabError):
    """The requested manifold/basis combination is not implemented."""


class OffManifoldError(LabError):
    """A point does not lie on the manifold."""


class IncompatibleSubmanifoldError(LabError):
    """A submanifold descriptor does not live on the given manifold."""


class UnderResolvedError(LabError):
    """A quadrature grid is too coarse for the requested computation."""


class TruncationError(LabError):
    """A spectral truncation does not cover the requested frequencies."""


class FitError(LabError):
    """Power-law regression on degenerate or invalid samples."""


class SimulationError(LabError):
    """Time integration left its validity range."""


class RankHypothesisError(LabError):
    """The mixed Hessian rank condition fails on the amplitude support."""


class DegeneratePointError(LabError):
    """Phase evaluated where it is not smooth."""
