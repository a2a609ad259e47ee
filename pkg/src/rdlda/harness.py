"""Experiment orchestration: configuration, runs, alpha sweeps and reports.

A run writes ``report.json``, ``confusion.csv``, ``dimhist.csv`` and
``checkpoint.rdlda`` into its output directory; a sweep adds ``sweep.csv``.
Everything in ``report.json`` except the ``timing`` entry is a pure
function of the configuration, so repeated runs give identical bytes.
"""

import configparser
import csv
import dataclasses
import hashlib
import json
import logging
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import predictors
from .classic_lda import LdaModel
from .data import (Dataset, FeatureStats, SyntheticSpec, feature_stats, load_csv, load_image_tensor,
                   make_synthetic, normalize, stratified_split)
from .errors import ConfigError
from .loss import OBJECTIVES, LossConfig
from .network import PRESETS, TrainConfig, build_preset, load_checkpoint, save_checkpoint
from .scatter import LabeledBatch, between_scatter, within_scatter
from .subclass import LabelMap, SubclassConfig, run_subclass_pipeline
from .training import evaluate, latents, make_reference, seed_for, train_network

__all__ = [
    "ExperimentConfig",
    "StageError",
    "load_config_file",
    "prepare_data",
    "run_experiment",
    "sweep_alpha",
    "confusion_matrix",
    "dimension_distributions",
    "write_dimhist",
    "evaluate_checkpoint",
    "report_json",
]

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.5


class StageError(RuntimeError):
    """A runtime failure, tagged with the pipeline stage it happened in."""

    def __init__(self, stage, cause):
        self.stage = stage
        super().__init__(f"{stage} failed: {type(cause).__name__}: {cause}")


@dataclass
class ExperimentConfig:
    """Everything that defines a run.

    ``alpha`` left as ``None`` means 1 for dlda and ``DEFAULT_ALPHA`` for
    rdlda.  ``clip_norm`` is an addition to the plain Nesterov optimizer
    settings; set it to ``None`` to train unclipped.
    """

    data: Optional[str] = None
    test_data: Optional[str] = None
    label_column: str = "-1"
    synthetic: Optional[str] = None
    objective: str = "rdlda"
    alpha: Optional[float] = None
    alphas: list = field(default_factory=list)
    lam: float = 1e-3
    epsilon: Optional[float] = None
    net: str = "mlp"
    hidden: tuple = (256, 256)
    epochs: int = 50
    batch_size: int = 120
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_period: int = 25
    clip_norm: Optional[float] = 1.0
    predictor: str = "hyperplane"
    seed: int = 0
    val_fraction: float = 0.2
    test_fraction: float = 0.2
    hflip: float = 0.0
    bins: int = 20
    subclass: bool = False
    k: int = 2
    ae_epochs: int = 30
    embedding_dim: int = 32
    ae_lr: float = 0.1
    out: Optional[str] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}; expected one of {OBJECTIVES}")
        if self.net not in PRESETS:
            raise ConfigError(f"unknown network preset {self.net!r}; expected one of {PRESETS}")
        if self.predictor not in predictors.PREDICTORS:
            raise ConfigError(f"unknown predictor {self.predictor!r}; expected one of {predictors.PREDICTORS}")
        if (self.data is None) == (self.synthetic is None):
            raise ConfigError("exactly one of data and synthetic must be given")
        if self.synthetic is not None:
            SyntheticSpec.parse(self.synthetic)
        if not 0.0 <= self.val_fraction < 1.0 or not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1) and test_fraction in (0, 1)")
        if self.bins < 2:
            raise ConfigError("bins must be at least 2")
        if self.subclass and self.objective == "cce":
            raise ConfigError("the subclass pipeline needs an eigenvalue objective")
        self.loss_config()
        self.train_config()

    def resolved_alpha(self):
        if self.objective == "dlda":
            return 1.0
        if self.objective == "cce":
            return 1.0
        return DEFAULT_ALPHA if self.alpha is None else float(self.alpha)

    def loss_config(self):
        if self.objective == "cce" and (self.alpha is not None or self.epsilon is not None):
            warnings.warn("alpha and epsilon are ignored by the cce objective", UserWarning, stacklevel=3)
        if self.objective == "dlda" and self.alpha not in (None, 1.0):
            warnings.warn("dlda fixes alpha = 1; the given alpha is ignored", UserWarning, stacklevel=3)
        return LossConfig(alpha=self.resolved_alpha(), lam=self.lam,
                          epsilon=1.0 if self.epsilon is None else self.epsilon,
                          objective=self.objective)

    def train_config(self):
        return TrainConfig(base_lr=self.lr, momentum=self.momentum, weight_decay=self.weight_decay,
                           lr_halving_period=self.lr_period, epochs=self.epochs,
                           batch_size=self.batch_size, seed=self.seed, clip_norm=self.clip_norm)

    def echo(self):
        """Config as a JSON-ready dict, without the output location."""
        d = dataclasses.asdict(self)
        d.pop("out")
        d["hidden"] = list(self.hidden)
        d["alpha"] = self.resolved_alpha() if self.objective != "cce" else None
        return d

    @classmethod
    def field_names(cls):
        return [f.name for f in dataclasses.fields(cls)]


_FIELD_ALIASES = {"lambda": "lam"}


def _coerce(name, value):
    """Convert a text value to the type of ``ExperimentConfig.<name>``."""
    if value is None:
        return None
    text = str(value).strip()
    if name in ("data", "test_data", "synthetic", "out", "objective", "net", "predictor", "label_column"):
        return text
    if name == "hidden":
        return tuple(int(v) for v in text.replace(",", " ").split())
    if name == "alphas":
        return [float(v) for v in text.replace(",", " ").split()]
    if name == "subclass":
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"bad boolean for subclass: {text!r}")
    if text.lower() == "none" and name in ("alpha", "epsilon", "clip_norm"):
        return None
    try:
        if name in ("epochs", "batch_size", "lr_period", "seed", "bins", "k", "ae_epochs", "embedding_dim"):
            return int(text)
        return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None


def normalize_key(key):
    key = key.strip().lower().replace("-", "_")
    return _FIELD_ALIASES.get(key, key)


def load_config_file(path):
    """Read an INI-style ``key = value`` file; section names are only for grouping."""
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (configparser.Error, OSError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    names = set(ExperimentConfig.field_names())
    values = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            name = normalize_key(key)
            if name not in names:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            values[name] = _coerce(name, value)
    return values


def build_config(file_values=None, overrides=None):
    """Config from file values with overrides (e.g. CLI flags) applied on top."""
    values = dict(file_values or {})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


@dataclass
class Prepared:
    train: Dataset
    val: Optional[Dataset]
    test: Dataset
    stats: object
    digest: str


def _load_file(path, cfg, split):
    if str(path).endswith(".rdim"):
        return load_image_tensor(path, split=split)
    return load_csv(path, label_column=cfg.label_column, split=split)


def prepare_data(cfg, stats=None):
    """Load or generate data, split off validation/test sets and normalize.

    Normalization uses ``stats`` when given (e.g. restored from a
    checkpoint) and the training split's statistics otherwise.
    """
    if cfg.synthetic is not None:
        spec = SyntheticSpec.parse(cfg.synthetic)
        train, test = make_synthetic(spec, "train"), make_synthetic(spec, "test")
    else:
        full = _load_file(cfg.data, cfg, "train")
        if cfg.test_data is not None:
            train, test = full, _load_file(cfg.test_data, cfg, "test")
        else:
            keep, held = stratified_split(full.labels, cfg.test_fraction, seed_for(cfg.seed, "split"))
            train, test = full.subset(keep, "train"), full.subset(held, "test")
        c = max(train.class_count, test.class_count)
        train, test = replace(train, class_count=c), replace(test, class_count=c)
    val = None
    if cfg.val_fraction > 0:
        keep, held = stratified_split(train.labels, cfg.val_fraction, seed_for(cfg.seed, "split") + 1)
        train, val = train.subset(keep, "train"), train.subset(held, "val")
    digest = hashlib.sha256()
    for ds in (train, val, test):
        if ds is not None:
            digest.update(ds.features.tobytes())
            digest.update(ds.labels.tobytes())
    if stats is None:
        stats = feature_stats(train)
    train, test = normalize(train, stats), normalize(test, stats)
    if val is not None:
        val = normalize(val, stats)
    return Prepared(train, val, test, stats, digest.hexdigest())


def confusion_matrix(pred, truth, class_count, positive=1):
    """Counts ``M[true, pred]`` plus accuracy, and sensitivity/specificity for two classes."""
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} predictions vs {truth.shape} labels")
    M = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(M, (truth, pred), 1)
    out = {"matrix": M.tolist(), "accuracy": float(np.trace(M) / max(M.sum(), 1))}
    if class_count == 2:
        neg = 1 - positive
        tp, fn = M[positive, positive], M[positive, neg]
        tn, fp = M[neg, neg], M[neg, positive]
        out["sensitivity"] = float(tp / (tp + fn)) if tp + fn else None
        out["specificity"] = float(tn / (tn + fp)) if tn + fp else None
    return out


def dimension_distributions(latent, labels, class_count, bins=20):
    """Per-dimension histograms by class over shared edges, class moments and Fisher ratios.

    The Fisher ratio of a dimension is ``diag(S_B) / diag(S_W)``; it is
    ``None`` (with a reason) when fewer than two classes are present or the
    within-class variance vanishes.
    """
    if bins < 2:
        raise ValueError("bins must be at least 2")
    H = np.asarray(latent, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    present = np.unique(y)
    dims = []
    means = np.stack([H[y == j].mean(axis=0) if np.any(y == j) else np.full(H.shape[1], np.nan)
                      for j in range(class_count)])
    ratio, reason = None, None
    if present.size < 2:
        reason = "fewer than two classes present; no between-class scatter"
    else:
        counts = np.bincount(y, minlength=class_count)[present]
        total = H.mean(axis=0)
        sb = np.diag(between_scatter(means[present], total, counts))
        remap = np.searchsorted(present, y)
        sw = np.diag(within_scatter(LabeledBatch(H, remap, present.size), means[present]))
        ratio = [float(b / w) if w > 0 else None for b, w in zip(sb, sw)]
        if any(r is None for r in ratio):
            reason = "zero within-class variance in some dimensions"
    for m in range(H.shape[1]):
        lo, hi = H[:, m].min(), H[:, m].max()
        edges = np.linspace(lo, hi if hi > lo else lo + 1.0, bins + 1)
        per_class = []
        for j in range(class_count):
            vals = H[y == j, m]
            per_class.append({
                "class": j,
                "counts": np.histogram(vals, bins=edges)[0].tolist(),
                "mean": float(vals.mean()) if vals.size else None,
                "variance": float(vals.var()) if vals.size else None,
            })
        dims.append({"dimension": m, "edges": edges.tolist(), "classes": per_class,
                     "fisher_ratio": None if ratio is None else ratio[m]})
    valid = [r for r in (ratio or []) if r is not None]
    return {"dimensions": dims, "fisher_reason": reason,
            "mean_fisher_ratio": float(np.mean(valid)) if valid else None}


def write_dimhist(path, dist):
    """Long-format CSV: one row per (dimension, class, bin)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dimension", "class", "bin", "bin_left", "bin_right", "count",
                    "class_mean", "class_variance", "fisher_ratio"])
        for d in dist["dimensions"]:
            edges = d["edges"]
            fr = "" if d["fisher_ratio"] is None else repr(d["fisher_ratio"])
            for cls in d["classes"]:
                for b, count in enumerate(cls["counts"]):
                    w.writerow([d["dimension"], cls["class"], b, repr(edges[b]), repr(edges[b + 1]),
                                count, "" if cls["mean"] is None else repr(cls["mean"]),
                                "" if cls["variance"] is None else repr(cls["variance"]), fr])


def _write_confusion(path, conf):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        M = conf["matrix"]
        w.writerow(["true\\pred"] + list(range(len(M))))
        for i, row in enumerate(M):
            w.writerow([i] + row)


def report_json(report):
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ConfigError, StageError):
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def _accuracies(preds, truth):
    return {k: float(np.mean(v == truth)) for k, v in sorted(preds.items())}


def _train_base(cfg, data, loss_cfg):
    net = build_preset(cfg.net, data.train.input_shape, data.train.class_count,
                       seed=seed_for(cfg.seed, "init"), hidden=cfg.hidden)
    result = train_network(net, data.train, loss_cfg, cfg.train_config(), val_ds=data.val,
                           selection_predictor=cfg.predictor, hflip=cfg.hflip)
    names = () if loss_cfg.objective == "cce" else predictors.PREDICTORS
    ref = make_reference(net, data.train, loss_cfg) if names else None
    preds = evaluate(net, data.train, data.test, loss_cfg, names, ref=ref)
    return net, result, ref, preds, 1


def _train_subclass(cfg, data, loss_cfg):
    scfg = SubclassConfig(k=cfg.k, ae_epochs=cfg.ae_epochs, embedding_dim=cfg.embedding_dim,
                          ae_lr=cfg.ae_lr, loss=loss_cfg, train=cfg.train_config(), net=cfg.net,
                          hidden=cfg.hidden, predictor=cfg.predictor, seed=cfg.seed)
    res = run_subclass_pipeline(data.train, data.test, scfg, val=data.val)
    return res.network, res.train_result, res.reference, res.all_predictions, cfg.k


def run_experiment(cfg: ExperimentConfig, write=True):
    """Train, evaluate every predictor on the test split and (optionally) write the outputs."""
    t0 = time.perf_counter()
    loss_cfg = cfg.loss_config()
    data = _stage("loading data", prepare_data, cfg)
    trainer = _train_subclass if cfg.subclass else _train_base
    net, result, ref, preds, k = _stage("training", trainer, cfg, data, loss_cfg)
    c = data.test.class_count
    main = "softmax" if loss_cfg.objective == "cce" else cfg.predictor
    conf = confusion_matrix(preds[main], data.test.labels, c)
    test_latent = _stage("evaluation", latents, net, data.test)
    dist = dimension_distributions(test_latent, data.test.labels, c, cfg.bins)
    echo = cfg.echo()
    report = {
        "config": echo,
        "input_hash": hashlib.sha256(
            (json.dumps(echo, sort_keys=True) + data.digest).encode()).hexdigest(),
        "objective": loss_cfg.objective,
        "alpha": loss_cfg.alpha if loss_cfg.objective != "cce" else None,
        "class_count": c,
        "subclasses_per_class": k,
        "epoch_loss": result.epoch_loss,
        "eigenvalue_trace": result.eigenvalue_trace,
        "val_accuracy": result.val_accuracy,
        "best_epoch": result.best_epoch,
        "checkpoint_selection": "best validation accuracy" if data.val is not None else "final epoch",
        "degenerate_steps": result.degenerate_steps,
        "steps": result.steps,
        "batch_digest": result.batch_digest,
        "accuracy": _accuracies(preds, data.test.labels),
        "predictor": main,
        "confusion": conf,
        "test_count": int(len(data.test)),
        "mean_fisher_ratio": dist["mean_fisher_ratio"],
        "fisher_ratio": [d["fisher_ratio"] for d in dist["dimensions"]],
        "timing": {"wall_clock_s": time.perf_counter() - t0,
                   "finished": time.strftime("%Y-%m-%dT%H:%M:%S")},
    }
    if write:
        if cfg.out is None:
            raise ConfigError("an output directory is required to write results")
        _stage("writing outputs", _write_outputs, cfg, report, dist, net, ref, data, loss_cfg, k)
    return report


def _write_outputs(cfg, report, dist, net, ref, data, loss_cfg, k):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report_json(report))
    _write_confusion(out / "confusion.csv", report["confusion"])
    write_dimhist(out / "dimhist.csv", dist)
    extra = {"norm.mean": data.stats.mean, "norm.std": data.stats.std}
    if ref is not None:
        extra.update({"ref.class_means": ref.class_means, "ref.projection": ref.projection,
                      "ref.hyperplane_normals": ref.hyperplane_normals,
                      "lda.projection": ref.lda.projection, "lda.eigenvalues": ref.lda.eigenvalues,
                      "lda.projected_class_means": ref.lda.projected_class_means,
                      "lda.priors": ref.lda.priors, "lda.dof": np.array([ref.lda.dof])})
    meta = {"objective": loss_cfg.objective, "alpha": loss_cfg.alpha, "lambda": loss_cfg.lam,
            "class_count": data.test.class_count, "k": k, "predictor": report["predictor"],
            "input_shape": list(data.train.input_shape)}
    save_checkpoint(out / "checkpoint.rdlda", net, extra=extra, meta=meta)


def sweep_alpha(cfg: ExperimentConfig, alphas=None, write=True):
    """One rdlda run per alpha with shared seeds; rows sorted by alpha.

    A failing run becomes a row with an ``error`` entry instead of aborting
    the sweep.
    """
    alphas = sorted(alphas if alphas is not None else cfg.alphas)
    if not alphas:
        raise ConfigError("an alpha sweep needs at least one alpha")
    rows = []
    for a in alphas:
        try:
            run_cfg = replace(cfg, objective="rdlda", alpha=float(a), alphas=[],
                              out=None if cfg.out is None else str(Path(cfg.out) / f"alpha_{a:g}"))
            report = run_experiment(run_cfg, write=write)
            rows.append({"alpha": float(a), "report": report, "error": None})
        except (ConfigError, StageError) as exc:
            log.warning("alpha %g failed: %s", a, exc)
            rows.append({"alpha": float(a), "report": None, "error": str(exc)})
    if write:
        if cfg.out is None:
            raise ConfigError("an output directory is required to write results")
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        with open(Path(cfg.out) / "sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", *predictors.PREDICTORS, "best_epoch", "error"])
            for row in rows:
                rep = row["report"]
                if rep is None:
                    w.writerow([row["alpha"], "", "", "", "", row["error"]])
                else:
                    w.writerow([row["alpha"], *(repr(rep["accuracy"][p]) for p in predictors.PREDICTORS),
                                rep["best_epoch"], ""])
    return rows


def evaluate_checkpoint(checkpoint, cfg: ExperimentConfig):
    """Evaluate a saved model on the test split defined by ``cfg``'s data settings."""
    net, extra, meta = _stage("loading checkpoint", load_checkpoint, checkpoint)
    stats = FeatureStats(extra["norm.mean"].astype(np.float64), extra["norm.std"].astype(np.float64))
    test = _stage("loading data", prepare_data, cfg, stats).test
    h = _stage("evaluation", latents, net, test)
    c, k = int(meta["class_count"]), int(meta["k"])
    preds = {}
    if meta["objective"] == "cce":
        preds["softmax"] = np.argmax(h, axis=1)
    if "ref.class_means" in extra:
        f64 = {key: v.astype(np.float64) for key, v in extra.items()}
        lda = LdaModel(projection=f64["lda.projection"], eigenvalues=f64["lda.eigenvalues"],
                       projected_class_means=f64["lda.projected_class_means"],
                       priors=f64["lda.priors"], alpha=1.0, lam=float(meta["lambda"]),
                       dof=int(f64["lda.dof"][0]))
        ref = predictors.LatentReference(f64["ref.class_means"], f64["ref.projection"],
                                         f64["ref.hyperplane_normals"], lda)
        label_map = LabelMap(c, k)
        for name in predictors.PREDICTORS:
            preds[name] = label_map.to_class(predictors.predict(name, h, ref))
    main = meta["predictor"]
    return {"checkpoint": str(checkpoint), "meta": meta,
            "accuracy": _accuracies(preds, test.labels),
            "confusion": confusion_matrix(preds[main], test.labels, c),
            "test_count": int(len(test))}
