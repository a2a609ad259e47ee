"""Regularized deep linear discriminant analysis in numpy.

The core pieces are the scatter matrices and their regularized
generalized eigenproblem (:mod:`scatter`, :mod:`mathcore`), the
eigenvalue loss with its analytic gradient (:mod:`loss`), a small
trainable network (:mod:`network`), latent-space classifiers
(:mod:`predictors`) and the autoencoder/k-means subclass pipeline
(:mod:`subclass`).  :mod:`harness` and :mod:`cli` run experiments.
"""

from . import classic_lda, data, harness, loss, mathcore, network, predictors, scatter, subclass
from .errors import ConfigError, DataFormatError, NotPositiveDefiniteError, StaleCacheError
from .loss import LossConfig, eig_loss, eig_loss_grad
from .mathcore import generalized_eig, sym_eig
from .network import TrainConfig, build_preset
from .predictors import build_reference
from .scatter import LabeledBatch, compute_scatter
from .training import evaluate, train_network

__version__ = "0.1.0"

__all__ = [
    "classic_lda", "data", "harness", "loss", "mathcore", "network", "predictors", "scatter",
    "subclass", "ConfigError", "DataFormatError", "NotPositiveDefiniteError", "StaleCacheError",
    "LossConfig", "eig_loss", "eig_loss_grad", "generalized_eig", "sym_eig", "TrainConfig",
    "build_preset", "build_reference", "LabeledBatch", "compute_scatter", "evaluate",
    "train_network",
]
