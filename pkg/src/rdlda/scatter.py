"""Class means and scatter matrices on labelled batches.

All sums are unnormalized (no ``1/(n-1)``).  Rows are processed in a
canonical order, sorted by label and then lexicographically by value, so
results are bit-identical under any permutation of the batch rows.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = [
    "LabeledBatch",
    "ScatterPair",
    "canonical_order",
    "class_means",
    "within_scatter",
    "between_scatter",
    "regularize_within",
    "compute_scatter",
]


@dataclass(frozen=True)
class LabeledBatch:
    """Feature rows with integer class labels in ``[0, class_count)``."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels)
        if features.ndim != 2:
            raise ValueError(f"features must be 2-D (n, d), got shape {features.shape}")
        if labels.shape != (features.shape[0],):
            raise ValueError(
                f"labels must have shape ({features.shape[0]},), got {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise ValueError("labels must be integers")
        labels = labels.astype(np.int64)
        if self.class_count < 1:
            raise ValueError("class_count must be positive")
        if features.shape[0] < 2:
            raise ValueError("a batch needs at least 2 samples")
        if labels.min() < 0 or labels.max() >= self.class_count:
            raise ValueError(f"labels must lie in [0, {self.class_count})")
        if np.unique(labels).size < 2:
            raise ValueError("a batch needs at least 2 distinct labels")
        if not np.all(np.isfinite(features)):
            raise ValueError("features contain non-finite values")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]


@dataclass(frozen=True)
class ScatterPair:
    sb: np.ndarray
    sw: np.ndarray
    sw_reg: np.ndarray
    class_means: np.ndarray
    total_mean: np.ndarray
    counts: np.ndarray
    alpha: float
    lam: float


def canonical_order(features, labels):
    """Row permutation sorting by label, then by feature values."""
    keys = [features[:, j] for j in range(features.shape[1] - 1, -1, -1)]
    return np.lexsort(keys + [labels])


def _sorted_view(batch):
    order = canonical_order(batch.features, batch.labels)
    return batch.features[order], batch.labels[order]


def class_means(batch):
    """Per-class means, total mean and class counts.

    Raises ``ValueError`` if a class in ``[0, c)`` has no samples.
    """
    X, y = _sorted_view(batch)
    c = batch.class_count
    counts = np.bincount(y, minlength=c)
    for j in range(c):
        if counts[j] == 0:
            raise ValueError(f"class {j} absent from batch")
    bounds = np.concatenate([[0], np.cumsum(counts)])
    means = np.stack([X[bounds[j]:bounds[j + 1]].sum(axis=0) / counts[j] for j in range(c)])
    total = X.sum(axis=0) / X.shape[0]
    return means, total, counts


def within_scatter(batch, means):
    """Sum over classes of outer products of deviations from the class mean."""
    X, y = _sorted_view(batch)
    D = X - np.asarray(means)[y]
    sw = D.T @ D
    return (sw + sw.T) / 2.0


def between_scatter(means, total_mean, counts):
    """``sum_j n_j (mu_j - mu)(mu_j - mu)^T``."""
    M = np.asarray(means, dtype=np.float64) - np.asarray(total_mean, dtype=np.float64)
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts <= 0):
        raise ValueError("class counts must be positive")
    sb = (M * counts[:, None]).T @ M
    return (sb + sb.T) / 2.0


def check_regularization(alpha, lam):
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    if not lam > 0.0:
        raise ConfigError(f"lambda must be positive, got {lam}")


def regularize_within(sw, alpha, lam):
    """Shrink off-diagonal within-class scatter by ``alpha`` and add ``lam`` to the diagonal.

    ``alpha * sw + (1 - alpha) * diag(sw) + lam * I``.  ``alpha = 1`` gives
    ``sw + lam * I``; ``alpha = 0`` keeps only the per-dimension variances.
    """
    check_regularization(alpha, lam)
    sw = np.asarray(sw, dtype=np.float64)
    # diagonal written directly so it is kept bit-exact for every alpha
    out = alpha * sw
    np.fill_diagonal(out, np.diag(sw) + lam)
    return out


def compute_scatter(batch, alpha, lam):
    """All scatter statistics of ``batch`` in one pass."""
    means, total, counts = class_means(batch)
    sw = within_scatter(batch, means)
    sb = between_scatter(means, total, counts)
    return ScatterPair(sb=sb, sw=sw, sw_reg=regularize_within(sw, alpha, lam),
                       class_means=means, total_mean=total, counts=counts,
                       alpha=float(alpha), lam=float(lam))
