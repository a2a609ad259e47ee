"""Classifiers over trained latent representations.

Three rules share one reference built from the full training set: distance
to the LDA decision hyperplanes, nearest class mean, and a classic LDA fit
on the latents.  Ties always go to the lowest class index.
"""

from dataclasses import dataclass

import numpy as np

from . import classic_lda
from .classic_lda import top_directions
from .scatter import LabeledBatch, compute_scatter

__all__ = [
    "PREDICTORS",
    "LatentReference",
    "build_reference",
    "hyperplane_scores",
    "hyperplane_predict",
    "euclidean_predict",
    "lda_predict",
    "predict",
]

PREDICTORS = ("hyperplane", "euclidean", "lda")


@dataclass(frozen=True)
class LatentReference:
    """Training-set statistics needed by the latent predictors.

    ``hyperplane_normals`` is ``class_means @ projection @ projection.T``;
    ``lda`` is the classic LDA model fitted on the same latents.
    """

    class_means: np.ndarray
    projection: np.ndarray
    hyperplane_normals: np.ndarray
    lda: classic_lda.LdaModel

    @property
    def dim(self):
        return self.class_means.shape[1]


def build_reference(train_latents: LabeledBatch, alpha=1.0, lam=1e-3):
    """Class means and the ``c - 1`` leading eigenvectors of the regularized problem.

    The hyperplane projection uses the training ``alpha``; the classic LDA
    predictor is an unregularized (``alpha = 1``) fit on the same latents.
    """
    sc = compute_scatter(train_latents, alpha, lam)
    p = min(train_latents.class_count - 1, train_latents.dim)
    A = top_directions(sc.sb, sc.sw_reg, p)[1]
    return LatentReference(class_means=sc.class_means, projection=A,
                           hyperplane_normals=sc.class_means @ A @ A.T,
                           lda=classic_lda.fit(train_latents, alpha=1.0, lam=lam))


def _queries(h, ref):
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    if h.shape[1] != ref.dim:
        raise ValueError(f"query width {h.shape[1]} != latent width {ref.dim}")
    return h


def hyperplane_scores(h, ref):
    """Signed distances ``h T^T - diag(H T^T) / 2`` to the decision hyperplanes."""
    h = _queries(h, ref)
    T = ref.hyperplane_normals
    offset = 0.5 * np.einsum("cd,cd->c", ref.class_means, T)
    return h @ T.T - offset


def hyperplane_predict(h, ref):
    """Normalized logistic class probabilities from hyperplane distances, and the argmax label."""
    d = hyperplane_scores(h, ref)
    # log of the logistic, normalized in log space so far-away queries cannot underflow to 0/0
    log_p = -np.logaddexp(0.0, -d)
    p = np.exp(log_p - log_p.max(axis=1, keepdims=True))
    p = p / p.sum(axis=1, keepdims=True)
    return p, np.argmax(p, axis=1)


def euclidean_predict(h, ref):
    """Label of the nearest training class mean."""
    h = _queries(h, ref)
    d2 = ((h[:, None, :] - ref.class_means[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def lda_predict(h, ref):
    return ref.lda.predict(_queries(h, ref))


def predict(name, h, ref):
    """Labels from the predictor called ``name``."""
    if name == "hyperplane":
        return hyperplane_predict(h, ref)[1]
    if name == "euclidean":
        return euclidean_predict(h, ref)
    if name == "lda":
        return lda_predict(h, ref)
    raise ValueError(f"unknown predictor {name!r}; expected one of {PREDICTORS}")
