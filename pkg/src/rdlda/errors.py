"""Exception types shared across the package."""

import numpy as np


class ConfigError(ValueError):
    """Invalid hyperparameter or experiment configuration."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised by :func:`rdlda.mathcore.cholesky` on a non-SPD input.

    ``pivot`` is the zero-based index of the failing diagonal pivot.
    """

    def __init__(self, pivot, value):
        self.pivot = pivot
        self.value = value
        super().__init__(
            f"matrix is not positive definite: pivot {pivot} = {value:.6g}")


class DataFormatError(ValueError):
    """Malformed CSV, image tensor or checkpoint file."""


class StaleCacheError(RuntimeError):
    """A forward cache was used after the parameters it was built from changed."""
