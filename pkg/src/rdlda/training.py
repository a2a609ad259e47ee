"""Training loop shared by the experiment harness and the subclass pipeline."""

import hashlib
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import predictors
from .data import BatchPlan, augment_hflip, make_batches
from .loss import DegenerateEigenvalueWarning, LossConfig, cce_loss, eig_loss_grad
from .network import TrainConfig, sgd_nesterov_step
from .scatter import LabeledBatch

__all__ = ["SEED_PURPOSES", "seed_for", "rng_for", "TrainResult", "train_network",
           "latents", "make_reference", "evaluate"]

# one independent random stream per purpose, all derived from the root seed
SEED_PURPOSES = {"init": 1, "batching": 2, "dropout": 3, "kmeans": 4,
                 "autoencoder": 5, "augment": 6, "split": 7}


def rng_for(root_seed, purpose):
    return np.random.default_rng([int(root_seed), SEED_PURPOSES[purpose]])


def seed_for(root_seed, purpose):
    return int(rng_for(root_seed, purpose).integers(2**31 - 1))


@dataclass
class TrainResult:
    epoch_loss: list = field(default_factory=list)
    eigenvalue_trace: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_accuracy: float = float("nan")
    degenerate_steps: int = 0
    steps: int = 0
    batch_digest: str = ""


def latents(net, ds):
    """Eval-mode network outputs for every sample of ``ds``."""
    return net.predict(ds.features)


def make_reference(net, train_ds, loss_cfg):
    """Latent reference built from the eval-mode latents of the full training set."""
    return predictors.build_reference(
        LabeledBatch(latents(net, train_ds), train_ds.labels, train_ds.class_count),
        alpha=loss_cfg.alpha, lam=loss_cfg.lam)


def evaluate(net, train_ds, test_ds, loss_cfg, names=predictors.PREDICTORS, ref=None):
    """Predicted labels on ``test_ds`` for each requested predictor.

    For the cce objective ``"softmax"`` (argmax of the logits) is included
    as well.
    """
    test_out = latents(net, test_ds)
    out = {}
    if loss_cfg.objective == "cce":
        out["softmax"] = np.argmax(test_out, axis=1)
    if names:
        ref = ref if ref is not None else make_reference(net, train_ds, loss_cfg)
        for name in names:
            out[name] = predictors.predict(name, test_out, ref)
    return out


def _accuracy(pred, labels):
    return float(np.mean(pred == labels))


def train_network(net, train_ds, loss_cfg: LossConfig, train_cfg: TrainConfig, val_ds=None,
                  selection_predictor="euclidean", hflip=0.0, lr=None, val_label_map=None):
    """Optimize ``net`` in place on ``train_ds``.

    The eigenvalue objectives are maximized (their negated gradient is
    backpropagated) on stratified batches; cce is minimized on plainly
    shuffled batches.  With ``val_ds`` the parameters with the best
    validation accuracy are restored at the end (earliest epoch on ties).
    ``lr`` overrides the halving schedule with a constant rate, and
    ``val_label_map`` converts predicted labels before they are compared with
    the validation labels (subclass ids to classes, for instance).
    """
    c = train_ds.class_count
    lda_objective = loss_cfg.objective != "cce"
    plan = BatchPlan(train_cfg.batch_size, stratified=lda_objective,
                     seed=seed_for(train_cfg.seed, "batching"))
    dropout_rng = rng_for(train_cfg.seed, "dropout")
    augment_seed = seed_for(train_cfg.seed, "augment")
    result = TrainResult()
    best_state = None
    # fingerprint of every batch's sample indices, for auditing runs that should share batches
    digest = hashlib.sha256()
    for epoch in range(train_cfg.epochs):
        ds = augment_hflip(train_ds, hflip, augment_seed, epoch) if hflip > 0 else train_ds
        losses, trace = [], []
        for batch in make_batches(ds, plan, epoch):
            digest.update(batch.indices.astype("<i8").tobytes())
            out, cache = net.forward(batch.features, "train", dropout_rng)
            if lda_objective:
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always", DegenerateEigenvalueWarning)
                    res = eig_loss_grad(LabeledBatch(out, batch.labels, c), loss_cfg)
                result.degenerate_steps += sum(
                    issubclass(w.category, DegenerateEigenvalueWarning) for w in caught)
                loss, grad_out = res.loss, -res.grad_h
                trace.append(res.selected_eigenvalues.tolist())
            else:
                loss, grad_out = cce_loss(out, batch.labels)
            if not np.isfinite(loss):
                raise FloatingPointError(f"training diverged at epoch {epoch}: loss {loss}")
            grads, _ = net.backward(cache, grad_out)
            sgd_nesterov_step(net, grads, train_cfg, epoch, lr=lr)
            losses.append(loss)
            result.steps += 1
        result.epoch_loss.append(float(np.mean(losses)))
        if trace:
            result.eigenvalue_trace.append(trace[-1])
        if val_ds is not None:
            names = () if loss_cfg.objective == "cce" else (selection_predictor,)
            pred = evaluate(net, train_ds, val_ds, loss_cfg, names)
            guess = pred["softmax" if not names else selection_predictor]
            if val_label_map is not None:
                guess = val_label_map(guess)
            acc = _accuracy(guess, val_ds.labels)
            result.val_accuracy.append(acc)
            if best_state is None or acc > result.best_val_accuracy:
                result.best_epoch, result.best_val_accuracy = epoch, acc
                best_state = net.copy_state()
    if best_state is not None:
        net.load_state(best_state)
    result.batch_digest = digest.hexdigest()
    return result
