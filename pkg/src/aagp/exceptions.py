"""Exception types raised across the package."""

import numpy as np


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class DimensionError(ValueError):
    """Array shapes or spatial dimensions do not agree."""


class SingularMatrixError(np.linalg.LinAlgError):
    """A factorization failed even at the largest jitter."""


class DuplicateError(ValueError):
    """Duplicated sites, time points or (site, day) rows."""


class LengthMismatchError(ValueError):
    """Mask, response and covariate lengths disagree."""


class NonFiniteError(ValueError):
    """NaN or infinite values where finite numbers are required."""


class ChainAbort(RuntimeError):
    """The sampler hit a non-finite state.

    The last valid state is attached as ``state`` so callers can dump it.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""
