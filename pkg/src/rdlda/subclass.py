"""Subclass RDLDA: autoencoder embedding, per-class K-means, subclass training.

Each class is split into ``k`` subclasses by K-means in the embedding space
of an autoencoder; an RDLDA network is trained to separate the ``c * k``
subclasses and its subclass predictions are folded back onto classes.
"""

import csv
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .data import BatchPlan, Dataset, make_batches
from .errors import ConfigError
from .loss import LossConfig
from .network import Dense, Network, ReLU, Sigmoid, Tanh, TrainConfig, build_preset, sgd_nesterov_step
from .scatter import canonical_order
from .training import evaluate, make_reference, seed_for, train_network

__all__ = [
    "LabelMap",
    "ClusterResult",
    "Autoencoder",
    "build_autoencoder",
    "ae_train_step",
    "train_autoencoder",
    "encode",
    "kmeans",
    "split_subclasses",
    "subclass_to_class",
    "export_assignments",
    "SubclassConfig",
    "PipelineResult",
    "run_subclass_pipeline",
]


@dataclass(frozen=True)
class LabelMap:
    """Bijection between ``(class, local subclass)`` pairs and flat ids ``class * k + local``."""

    class_count: int
    k: int

    @property
    def size(self):
        return self.class_count * self.k

    def to_flat(self, classes, local):
        classes, local = np.asarray(classes), np.asarray(local)
        if np.any((local < 0) | (local >= self.k)):
            raise ValueError(f"local subclass ids must lie in [0, {self.k})")
        return classes * self.k + local

    def to_class(self, flat):
        flat = np.asarray(flat)
        if np.any((flat < 0) | (flat >= self.size)):
            raise ValueError(f"subclass ids must lie in [0, {self.size})")
        return flat // self.k

    def to_local(self, flat):
        return np.asarray(flat) % self.k


def subclass_to_class(flat_ids, label_map):
    return label_map.to_class(flat_ids)


@dataclass
class ClusterResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    history: list = field(default_factory=list)
    iterations: int = 0


def _sq_dist(points, centroids):
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _kmeans_pp(points, k, rng):
    n = points.shape[0]
    centroids = [points[rng.integers(n)]]
    closest = ((points - centroids[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            idx = int(rng.integers(n))
        centroids.append(points[idx])
        closest = np.minimum(closest, ((points - points[idx]) ** 2).sum(axis=1))
    return np.array(centroids)


def _lloyd(points, centroids, max_iter):
    k = centroids.shape[0]
    assign = None
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dist(points, centroids)
        new_assign = np.argmin(d2, axis=1)
        # repair empty clusters with the point farthest from its centroid
        for j in range(k):
            if not np.any(new_assign == j):
                own = d2[np.arange(len(points)), new_assign]
                counts = np.bincount(new_assign, minlength=k)
                own = np.where(counts[new_assign] > 1, own, -1.0)
                new_assign[int(np.argmax(own))] = j
        centroids = np.stack([points[new_assign == j].mean(axis=0) for j in range(k)])
        history.append(float(_sq_dist(points, centroids)[np.arange(len(points)), new_assign].sum()))
        if assign is not None and np.array_equal(assign, new_assign):
            break
        assign = new_assign
    return new_assign, centroids, history, it


def kmeans(points, k, seed=0, n_init=5, max_iter=300):
    """Lloyd's algorithm from k-means++ seeds; best of ``n_init`` restarts.

    Points are clustered in a canonical (lexicographic) order so the result
    does not depend on the input row order.  ``history`` holds the inertia
    after every update step of the returned run.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("points must be 2-D")
    n = points.shape[0]
    if k < 1 or n < k:
        raise ValueError(f"kmeans needs 1 <= k <= n, got k={k}, n={n}")
    order = canonical_order(points, np.zeros(n, dtype=np.int64))
    sorted_points = points[order]
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        centroids = _kmeans_pp(sorted_points, k, rng)
        assign, centroids, history, iters = _lloyd(sorted_points, centroids, max_iter)
        if best is None or history[-1] < best.inertia:
            best = ClusterResult(assign, centroids, history[-1], history, iters)
    assignments = np.empty(n, dtype=np.int64)
    assignments[order] = best.assignments
    best.assignments = assignments
    return best


def split_subclasses(embeddings, labels, k, seed=0, class_count=None):
    """Flat subclass ids from independent per-class K-means runs.

    Local ids within a class follow the lexicographic order of the cluster
    centroids, which makes them independent of K-means' arbitrary numbering.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    c = class_count if class_count is not None else int(labels.max()) + 1
    label_map = LabelMap(c, k)
    flat = np.empty(labels.size, dtype=np.int64)
    for j in range(c):
        members = np.flatnonzero(labels == j)
        if members.size < k:
            raise ValueError(f"class {j} has {members.size} samples, fewer than k={k}")
        result = kmeans(embeddings[members], k, seed=[seed, j] if k > 1 else 0)
        rank = np.empty(k, dtype=np.int64)
        cols = [result.centroids[:, m] for m in range(result.centroids.shape[1] - 1, -1, -1)]
        rank[np.lexsort(cols)] = np.arange(k)
        flat[members] = label_map.to_flat(j, rank[result.assignments])
    return flat


def export_assignments(path, labels, flat_ids, label_map):
    """CSV with columns ``sample_index,class,subclass_local,subclass_flat``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_index", "class", "subclass_local", "subclass_flat"])
        for i, (y, s) in enumerate(zip(labels, flat_ids)):
            w.writerow([i, int(y), int(label_map.to_local(s)), int(s)])


@dataclass
class Autoencoder:
    """Encoder ending in Tanh and a mirrored decoder ending in Sigmoid."""

    encoder: Network
    decoder: Network
    embedding_dim: int


def build_autoencoder(in_features, embedding_dim, hidden=(), seed=0):
    """Dense autoencoder; ``hidden`` lists encoder widths, mirrored in the decoder."""
    rng = np.random.default_rng(seed)
    enc, width = [], in_features
    for h in hidden:
        enc += [Dense(width, h, rng=rng), ReLU()]
        width = h
    enc += [Dense(width, embedding_dim, rng=rng), Tanh()]
    dec, width = [], embedding_dim
    for h in reversed(hidden):
        dec += [Dense(width, h, rng=rng), ReLU()]
        width = h
    dec += [Dense(width, in_features, rng=rng), Sigmoid()]
    return Autoencoder(Network(enc), Network(dec), embedding_dim)


def _check_unit_range(x):
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError("autoencoder inputs must lie in [0, 1] to match the Sigmoid output range")


def reconstruction_loss(model, x):
    x = np.asarray(x, dtype=np.float64)
    x_hat = model.decoder.forward(model.encoder.forward(x, "eval")[0], "eval")[0]
    return float(((x - x_hat) ** 2).sum(axis=1).mean())


def ae_gradients(model, x):
    """Reconstruction loss and gradients ``(encoder_grads, decoder_grads)``."""
    h, enc_cache = model.encoder.forward(x, "train")
    x_hat, dec_cache = model.decoder.forward(h, "train")
    diff = x_hat - x
    loss = float((diff ** 2).sum(axis=1).mean())
    dec_grads, grad_h = model.decoder.backward(dec_cache, 2.0 * diff / x.shape[0])
    enc_grads, _ = model.encoder.backward(enc_cache, grad_h)
    return loss, enc_grads, dec_grads


def ae_train_step(model, batch, lr, cfg=None):
    """One optimizer step on the mean squared reconstruction error; returns the pre-step loss."""
    x = np.asarray(batch, dtype=np.float64)
    _check_unit_range(x)
    cfg = cfg if cfg is not None else TrainConfig(weight_decay=0.0)
    loss, enc_grads, dec_grads = ae_gradients(model, x)
    sgd_nesterov_step(model.encoder, enc_grads, cfg, 0, lr=lr)
    sgd_nesterov_step(model.decoder, dec_grads, cfg, 0, lr=lr)
    return loss


def encode(model, x):
    """Embeddings in (-1, 1)."""
    return model.encoder.predict(np.asarray(x, dtype=np.float64))


def train_autoencoder(model, x, epochs, lr=0.1, batch_size=64, seed=0, cfg=None):
    """Train for ``epochs`` passes over ``x`` at a constant rate; returns per-step losses."""
    x = np.asarray(x, dtype=np.float64)
    _check_unit_range(x)
    plan = BatchPlan(batch_size, stratified=False, seed=seed)
    dummy = Dataset(x.reshape(len(x), -1), np.zeros(len(x), dtype=np.int64))
    losses = []
    for epoch in range(epochs):
        for batch in make_batches(dummy, plan, epoch):
            losses.append(ae_train_step(model, batch.features, lr, cfg))
    return losses


@dataclass(frozen=True)
class SubclassConfig:
    """Settings of the subclass pipeline.

    ``k`` subclasses per class, ``ae_epochs`` autoencoder epochs (``p``),
    RDLDA training settings in ``train`` (its ``epochs`` is ``q``).
    """

    k: int = 2
    ae_epochs: int = 30
    embedding_dim: int = 32
    ae_hidden: tuple = (64,)
    ae_lr: float = 0.1
    ae_batch_size: int = 64
    loss: LossConfig = LossConfig()
    train: TrainConfig = TrainConfig()
    net: str = "mlp"
    hidden: tuple = (256, 256)
    predictor: str = "hyperplane"
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be at least 1")
        if self.loss.objective == "cce":
            raise ConfigError("the subclass pipeline trains an eigenvalue objective, not cce")


@dataclass
class PipelineResult:
    predictions: np.ndarray
    subclass_predictions: np.ndarray
    all_predictions: dict
    subclass_labels: np.ndarray
    label_map: LabelMap
    network: Network
    reference: object
    ae_losses: list
    train_result: object


def _unit_scale(train_x, other_x):
    flat_train = train_x.reshape(len(train_x), -1)
    lo, hi = flat_train.min(axis=0), flat_train.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    scale = lambda x: np.clip((x.reshape(len(x), -1) - lo) / span, 0.0, 1.0)
    return scale(train_x), scale(other_x)


def run_subclass_pipeline(train, test, cfg: SubclassConfig, val=None):
    """Train the autoencoder, split classes, train RDLDA on subclasses and predict classes.

    Autoencoder inputs are min-max scaled to [0, 1] with training-set
    ranges.  With ``k = 1`` the clustering stage is skipped; the result is
    then the plain RDLDA pipeline with the same seeds.
    """
    c = train.class_count
    label_map = LabelMap(c, cfg.k)
    per_subclass = cfg.train.batch_size / label_map.size
    if per_subclass < 10:
        warnings.warn(f"only {per_subclass:.1f} samples per subclass in a mini-batch; "
                      "scatter estimates will be noisy", RuntimeWarning, stacklevel=2)
    ae_losses = []
    if cfg.k > 1:
        ae_x, _ = _unit_scale(train.features, test.features)
        ae = build_autoencoder(ae_x.shape[1], cfg.embedding_dim, cfg.ae_hidden,
                               seed=seed_for(cfg.seed, "autoencoder"))
        ae_losses = train_autoencoder(ae, ae_x, cfg.ae_epochs, lr=cfg.ae_lr,
                                      batch_size=cfg.ae_batch_size,
                                      seed=seed_for(cfg.seed, "autoencoder"))
        sub_labels = split_subclasses(encode(ae, ae_x), train.labels, cfg.k,
                                      seed=seed_for(cfg.seed, "kmeans"), class_count=c)
    else:
        sub_labels = train.labels.copy()
    sub_train = replace(train, labels=sub_labels, class_count=label_map.size)
    net = build_preset(cfg.net, train.input_shape, label_map.size,
                       seed=seed_for(cfg.seed, "init"), hidden=cfg.hidden)
    result = train_network(net, sub_train, cfg.loss, replace(cfg.train, seed=cfg.seed), val_ds=val,
                           selection_predictor=cfg.predictor,
                           val_label_map=label_map.to_class)
    ref = make_reference(net, sub_train, cfg.loss)
    sub_pred = evaluate(net, sub_train, test, cfg.loss, ref=ref)
    return PipelineResult(predictions=label_map.to_class(sub_pred[cfg.predictor]),
                          subclass_predictions=sub_pred[cfg.predictor],
                          all_predictions={k: label_map.to_class(v) for k, v in sub_pred.items()},
                          subclass_labels=sub_labels, label_map=label_map, network=net,
                          reference=ref, ae_losses=ae_losses, train_result=result)
