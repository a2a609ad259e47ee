"""Classic (shallow) LDA: fit a projection, transform, predict."""

from dataclasses import dataclass

import numpy as np

from .mathcore import generalized_eig
from .scatter import LabeledBatch, compute_scatter

__all__ = ["LdaModel", "fit", "predict", "top_directions"]


@dataclass(frozen=True)
class LdaModel:
    """A fitted LDA classifier.

    Attributes
    ----------
    projection : ndarray, shape (d, p)
        Discriminant directions ordered by descending eigenvalue, each
        normalized to unit length under the regularized within-class scatter.
    eigenvalues : ndarray, shape (p,)
        The matching generalized eigenvalues, descending.
    projected_class_means : ndarray, shape (c, p)
    priors : ndarray, shape (c,)
        Class frequencies of the training batch.
    dof : int
        ``n - c`` of the training batch.  The within-class scatter is an
        unnormalized sum, so squared projected distances are multiplied by
        ``dof`` to measure them against the pooled covariance before the
        log-prior term is applied.
    """

    projection: np.ndarray
    eigenvalues: np.ndarray
    projected_class_means: np.ndarray
    priors: np.ndarray
    alpha: float
    lam: float
    dof: int = 1

    @property
    def dim(self):
        return self.projection.shape[0]

    def transform(self, queries):
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if queries.shape[1] != self.dim:
            raise ValueError(f"query width {queries.shape[1]} != model width {self.dim}")
        return queries @ self.projection

    def predict(self, queries):
        Z = self.transform(queries)
        d2 = ((Z[:, None, :] - self.projected_class_means[None, :, :]) ** 2).sum(axis=2)
        with np.errstate(divide="ignore"):
            score = self.dof * d2 - 2.0 * np.log(self.priors)
        return np.argmin(score, axis=1)


def top_directions(sb, sw_reg, count):
    """The ``count`` leading generalized eigenpairs, largest eigenvalue first."""
    values, vectors = generalized_eig(sb, sw_reg)
    order = np.arange(values.size - 1, values.size - 1 - count, -1)
    return values[order], vectors[:, order]


def fit(batch: LabeledBatch, alpha=1.0, lam=1e-3):
    """Fit LDA with the within-class scatter regularized by ``(alpha, lam)``.

    Keeps ``p = min(c - 1, d)`` directions, including any whose eigenvalue is
    zero because the between-class scatter is rank deficient.
    """
    c = batch.class_count
    if batch.n <= c:
        raise ValueError(f"LDA needs more samples ({batch.n}) than classes ({c})")
    sc = compute_scatter(batch, alpha, lam)
    p = min(c - 1, batch.dim)
    values, projection = top_directions(sc.sb, sc.sw_reg, p)
    return LdaModel(projection=projection, eigenvalues=values,
                    projected_class_means=sc.class_means @ projection,
                    priors=sc.counts / sc.counts.sum(),
                    alpha=float(alpha), lam=float(lam), dof=batch.n - c)


def predict(model: LdaModel, queries):
    """Nearest projected class mean (pooled-covariance scale) with a ``-2 ln(prior)`` correction.

    Ties go to the lowest class index.
    """
    return model.predict(queries)
