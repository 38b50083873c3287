"""Exception types shared across the package.

Numerical failures carry enough context (variable names, eigenvalues) to
diagnose which operation went degenerate without re-running under a debugger.
"""


class FgddfError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(FgddfError):
    """Vector/matrix shapes disagree with the declared variable ordering."""


class UnknownVariable(FgddfError):
    """An operation referenced a variable the container does not hold."""


class SingularInformation(FgddfError):
    """Information matrix is singular; moment form does not exist."""


class SingularCovariance(FgddfError):
    """Covariance matrix is singular; information form does not exist."""


class SingularElimination(FgddfError):
    """Marginalization would invert a singular block (unconstrained variable)."""


class EmptyGraph(FgddfError):
    """Requested a joint density from a graph with no factors."""


class DeflationFailure(FgddfError):
    """Conservative re-factorization could not find a valid scaling."""


class DegenerateGeometry(FgddfError):
    """Observation geometry is degenerate (e.g. zero range)."""


class NonPsdFusion(FgddfError):
    """A fused marginal lost positive semidefiniteness."""


class SingularCombination(FgddfError):
    """No convex combination of the two information matrices is invertible."""


class MalformedMessage(FgddfError):
    """A wire message failed structural validation on receipt."""


class ConfigError(FgddfError):
    """Scenario configuration is invalid; message names the offending field."""
