"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit 1,
runtime/solver/analysis problems exit 2, I/O problems exit 3.
"""


class CdaError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CdaError, ValueError):
    """Invalid market or experiment configuration."""


class NoEquilibriumError(CdaError, ValueError):
    """Supply and demand curves do not cross inside the quantity domain."""


class SolverError(CdaError, RuntimeError):
    """Iterative eigen-solver failed to converge."""

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class DomainError(CdaError, ValueError):
    """Input outside the mathematical domain of an operation."""


class InsufficientDataError(CdaError, ValueError):
    """Not enough observations to compute the requested quantity."""


class DegenerateSeriesError(CdaError, ValueError):
    """Zero-variance input where a spread is required."""


class UndefinedModularityError(CdaError, ValueError):
    """Modularity is undefined on a graph with no edges."""


class FitError(CdaError, ValueError):
    """Too few usable histogram bins for a regression."""
