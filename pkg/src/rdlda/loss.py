"""Training objectives.

The eigenvalue objective is reported as a value to *maximize*: the mean of
the valid generalized eigenvalues lying within ``epsilon`` of the smallest
one.  ``grad_h`` is its gradient (ascent direction) with respect to the
hidden representation rows.  Trainers negate both before minimizing.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .classic_lda import top_directions
from .errors import ConfigError
from .scatter import LabeledBatch, check_regularization, compute_scatter

__all__ = [
    "OBJECTIVES",
    "LossConfig",
    "EigLossResult",
    "DegenerateEigenvalueWarning",
    "eig_loss",
    "eig_loss_grad",
    "cce_loss",
]

OBJECTIVES = ("rdlda", "dlda", "cce")


class DegenerateEigenvalueWarning(RuntimeWarning):
    """A selected eigenvalue is (nearly) tied with an unselected one."""


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.0
    lam: float = 1e-3
    epsilon: float = 1.0
    objective: str = "rdlda"

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}; expected one of {OBJECTIVES}")
        if self.objective == "dlda":
            object.__setattr__(self, "alpha", 1.0)
        check_regularization(self.alpha, self.lam)
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")


@dataclass
class EigLossResult:
    """Value and selection of the eigenvalue objective.

    ``valid_eigenvalues`` are the top ``min(c - 1, d)`` generalized
    eigenvalues in descending order and ``selected`` indexes into them.
    ``grad_h`` is only filled in by :func:`eig_loss_grad`.
    """

    loss: float
    selected: np.ndarray
    valid_eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    degenerate: bool = False
    grad_h: np.ndarray = None

    @property
    def k(self):
        return int(self.selected.size)

    @property
    def selected_eigenvalues(self):
        return self.valid_eigenvalues[self.selected]


def _selection(valid, epsilon):
    return np.flatnonzero(valid < valid.min() + epsilon)


def _is_degenerate(all_values, valid, selected, epsilon, tol=1e-8):
    scale = tol * max(1.0, float(np.abs(all_values).max()))
    sel = valid[selected]
    rest = np.concatenate([np.delete(valid, selected), all_values[: all_values.size - valid.size]])
    if rest.size and np.min(np.abs(sel[:, None] - rest[None, :])) <= scale:
        return True
    # an eigenvalue sitting on the selection threshold makes the set jump;
    # the minimum itself is always selected
    others = np.delete(valid, np.argmin(valid))
    return bool(np.any(np.abs(others - (valid.min() + epsilon)) <= scale))


def _evaluate(batch, cfg):
    if cfg.objective == "cce":
        raise ConfigError("the eigenvalue loss is not defined for the cce objective")
    sc = compute_scatter(batch, cfg.alpha, cfg.lam)
    p = min(batch.class_count - 1, batch.dim)
    values, vectors = top_directions(sc.sb, sc.sw_reg, batch.dim)
    valid, valid_vecs = values[:p], vectors[:, :p]
    selected = _selection(valid, cfg.epsilon)
    degenerate = _is_degenerate(values[::-1], valid, selected, cfg.epsilon)
    if degenerate:
        warnings.warn("selected eigenvalues are nearly tied with unselected ones; "
                      "returning a subgradient", DegenerateEigenvalueWarning, stacklevel=3)
    result = EigLossResult(loss=float(valid[selected].mean()), selected=selected,
                           valid_eigenvalues=valid, eigenvectors=valid_vecs,
                           degenerate=degenerate)
    return result, sc


def eig_loss(batch: LabeledBatch, cfg: LossConfig):
    """Mean of the valid eigenvalues below ``min(valid) + epsilon``."""
    return _evaluate(batch, cfg)[0]


def eig_loss_grad(batch: LabeledBatch, cfg: LossConfig):
    """:func:`eig_loss` plus its gradient with respect to the batch rows.

    For each selected pair ``(v, e)`` with ``e.T S'_W e = 1`` the eigenvalue
    derivative is ``e.T (dS_B - v dS'_W) e``.  Per row ``h`` of class ``j``
    that works out to::

        2 (e.(mu_j - mu)) e - v [2 alpha (e.(h - mu_j)) e + 2 (1 - alpha) e*e*(h - mu_j)]

    averaged over the selected pairs.
    """
    result, sc = _evaluate(batch, cfg)
    E = result.eigenvectors[:, result.selected]
    v = result.selected_eigenvalues
    y = batch.labels
    between = (sc.class_means - sc.total_mean)[y]
    within = batch.features - sc.class_means[y]
    grad = (between @ E) @ E.T
    grad -= cfg.alpha * ((within @ E) * v) @ E.T
    grad -= (1.0 - cfg.alpha) * within * ((E * E) @ v)
    result.grad_h = grad * (2.0 / v.size)
    return result


def cce_loss(logits, labels):
    """Mean categorical cross entropy and its gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_prob = shifted - log_norm
    loss = -log_prob[np.arange(n), labels].mean()
    grad = np.exp(log_prob)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n
