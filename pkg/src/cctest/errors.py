"""Exception types shared across the package."""


class CCTError(Exception):
    """Base class for all package errors."""


class DomainError(CCTError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class ConfigurationError(CCTError, ValueError):
    """Inconsistent or unsupported arguments / experiment configuration."""


class ValidationError(CCTError, ValueError):
    """Data failed an invariant check (e.g. a correlation matrix file)."""


class DegenerateMatrixError(ValidationError):
    """A matrix construction divided by a zero-norm column."""


class NotCorrelationMatrixError(ValidationError):
    """Matrix is not positive semidefinite within tolerance."""


class UnstableEstimateWarning(UserWarning):
    """Too few Monte Carlo replicates for the requested tail level."""
