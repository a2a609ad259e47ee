"""Datasets: loading, normalization, augmentation, batching, synthetic data.

Two on-disk formats are supported.  CSV files hold one sample per row with
an optional header.  Image tensor files are ``b"RDIM1"``, four little-endian
u32 values ``n, channels, h, w``, ``n*channels*h*w`` u8 pixels, and the
CRC32 of the pixel bytes; labels live in a sidecar ``<file>.labels`` with
one integer per line.
"""

import csv
import struct
import zlib
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConfigError, DataFormatError

__all__ = [
    "Dataset",
    "FeatureStats",
    "BatchPlan",
    "Batch",
    "SyntheticSpec",
    "load_csv",
    "read_image_tensor",
    "write_image_tensor",
    "load_image_tensor",
    "feature_stats",
    "normalize",
    "augment_hflip",
    "batch_indices",
    "make_batches",
    "make_synthetic",
    "stratified_split",
]


@dataclass(frozen=True)
class Dataset:
    """Samples (``(n, d)`` or image mode ``(n, channels, h, w)``) with labels."""

    features: np.ndarray
    labels: np.ndarray
    split: str = "train"
    provenance: str = ""
    class_count: Optional[int] = None

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim not in (2, 4):
            raise ValueError(f"features must be (n, d) or (n, c, h, w), got {features.shape}")
        if labels.shape != (features.shape[0],):
            raise ValueError("one label per sample required")
        if not np.all(np.isfinite(features)):
            raise ValueError("features contain non-finite values")
        c = self.class_count
        if c is None:
            c = int(labels.max()) + 1 if labels.size else 0
        if labels.size and (labels.min() < 0 or labels.max() >= c):
            raise ValueError(f"labels must lie in [0, {c})")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_count", int(c))

    def __len__(self):
        return self.features.shape[0]

    @property
    def image_mode(self):
        return self.features.ndim == 4

    @property
    def input_shape(self):
        return self.features.shape[1:]

    def subset(self, indices, split=None):
        idx = np.asarray(indices, dtype=np.int64)
        return replace(self, features=self.features[idx], labels=self.labels[idx],
                       split=split or self.split)

    def counts(self):
        return np.bincount(self.labels, minlength=self.class_count)


def _parse_float(cell):
    try:
        return float(cell)
    except ValueError:
        return None


def load_csv(path, label_column=-1, feature_columns=None, class_count=None, split="train"):
    """Read a comma-separated file into a :class:`Dataset`.

    ``label_column`` and ``feature_columns`` accept column names (when the
    file has a header) or integer indices.  A first line containing any
    non-numeric cell is treated as a header.  Parse failures raise
    :class:`DataFormatError` citing the 1-based line number.
    """
    with open(path, newline="") as fh:
        rows = [(i + 1, row) for i, row in enumerate(csv.reader(fh)) if row and any(c.strip() for c in row)]
    if not rows:
        raise DataFormatError(f"{path}: no data")
    header = None
    if any(_parse_float(c) is None for c in rows[0][1]):
        header = [c.strip() for c in rows[0][1]]
        rows = rows[1:]
    if not rows:
        raise DataFormatError(f"{path}: header but no data rows")
    width = len(header) if header else len(rows[0][1])

    def resolve(col):
        if isinstance(col, str) and not col.lstrip("-").isdigit():
            if header is None or col not in header:
                raise ConfigError(f"{path}: unknown column {col!r}")
            return header.index(col)
        idx = int(col)
        if not -width <= idx < width:
            raise ConfigError(f"{path}: column index {idx} out of range for {width} columns")
        return idx % width

    label_idx = resolve(label_column)
    if feature_columns is None:
        feat_idx = [j for j in range(width) if j != label_idx]
    else:
        feat_idx = [resolve(c) for c in feature_columns]

    features = np.empty((len(rows), len(feat_idx)))
    labels = np.empty(len(rows), dtype=np.int64)
    for r, (line, row) in enumerate(rows):
        if len(row) != width:
            raise DataFormatError(f"{path}: line {line}: expected {width} cells, got {len(row)}")
        for k, j in enumerate(feat_idx):
            value = _parse_float(row[j]) if row[j].strip() else None
            if value is None:
                raise DataFormatError(f"{path}: line {line}: non-numeric or missing cell {row[j]!r} in column {j}")
            features[r, k] = value
        label = _parse_float(row[label_idx])
        if label is None or label != int(label) or label < 0:
            raise DataFormatError(f"{path}: line {line}: label {row[label_idx]!r} is not a non-negative integer")
        if class_count is not None and label >= class_count:
            raise DataFormatError(f"{path}: line {line}: unknown label {int(label)} (class_count={class_count})")
        labels[r] = int(label)
    return Dataset(features, labels, split=split, provenance=f"csv:{path}", class_count=class_count)


_IMAGE_MAGIC = b"RDIM1"
_IMAGE_HEADER = struct.Struct("<4I")


def write_image_tensor(path, pixels, labels=None):
    """Write u8 ``pixels`` of shape ``(n, channels, h, w)``; labels go to the sidecar."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 4 or pixels.dtype != np.uint8:
        raise ValueError("pixels must be a uint8 array of shape (n, channels, h, w)")
    payload = np.ascontiguousarray(pixels).tobytes()
    with open(path, "wb") as fh:
        fh.write(_IMAGE_MAGIC + _IMAGE_HEADER.pack(*pixels.shape) + payload
                 + struct.pack("<I", zlib.crc32(payload)))
    if labels is not None:
        with open(f"{path}.labels", "w") as fh:
            fh.writelines(f"{int(v)}\n" for v in labels)


def read_image_tensor(path):
    """Raw u8 pixel array from an image tensor file."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(_IMAGE_MAGIC):
        raise DataFormatError(f"{path}: bad magic, not an RDIM1 image tensor")
    start = len(_IMAGE_MAGIC) + _IMAGE_HEADER.size
    if len(data) < start:
        raise DataFormatError(f"{path}: truncated header")
    shape = _IMAGE_HEADER.unpack_from(data, len(_IMAGE_MAGIC))
    size = int(np.prod(shape, dtype=np.int64))
    if len(data) != start + size + 4:
        raise DataFormatError(
            f"{path}: checksum error: payload length {len(data) - start - 4} does not match shape {shape}")
    payload = data[start:start + size]
    (crc,) = struct.unpack("<I", data[start + size:])
    if zlib.crc32(payload) != crc:
        raise DataFormatError(f"{path}: checksum error: CRC32 mismatch")
    return np.frombuffer(payload, dtype=np.uint8).reshape(shape)


def load_image_tensor(path, labels=None, split="train", class_count=None):
    """Image tensor file as a :class:`Dataset` with pixels scaled to [0, 1]."""
    pixels = read_image_tensor(path)
    if labels is None:
        try:
            with open(f"{path}.labels") as fh:
                labels = [int(line) for line in fh if line.strip()]
        except FileNotFoundError:
            raise DataFormatError(f"{path}: no labels given and no {path}.labels sidecar") from None
    if len(labels) != pixels.shape[0]:
        raise DataFormatError(f"{path}: {len(labels)} labels for {pixels.shape[0]} images")
    return Dataset(pixels / 255.0, labels, split=split, provenance=f"rdim:{path}",
                   class_count=class_count)


class FeatureStats(NamedTuple):
    mean: np.ndarray
    std: np.ndarray


def feature_stats(ds):
    """Mean and standard deviation per feature, or per channel in image mode."""
    axes = (0, 2, 3) if ds.image_mode else (0,)
    mean = ds.features.mean(axis=axes)
    std = ds.features.std(axis=axes)
    return FeatureStats(mean, std)


def normalize(ds, stats):
    """``(x - mean) / std`` using statistics computed on the training split; std floored at 1e-8."""
    mean = np.asarray(stats.mean, dtype=np.float64)
    std = np.maximum(np.asarray(stats.std, dtype=np.float64), 1e-8)
    expected = ds.features.shape[1]
    if mean.shape != (expected,) or std.shape != (expected,):
        raise ValueError(f"stats width {mean.shape} does not match data width {expected}")
    if ds.image_mode:
        mean, std = mean[:, None, None], std[:, None, None]
    return replace(ds, features=(ds.features - mean) / std)


def augment_hflip(ds, probability=0.5, seed=0, epoch=0):
    """Flip each image along its width axis with the given probability.

    Draws depend only on ``(seed, epoch)`` and the sample index.
    """
    if not ds.image_mode:
        raise ValueError("horizontal flipping needs image-mode data")
    if not 0.0 <= probability <= 1.0:
        raise ConfigError(f"flip probability must lie in [0, 1], got {probability}")
    flip = np.random.default_rng([seed, epoch]).random(len(ds)) < probability
    features = ds.features.copy()
    features[flip] = features[flip][..., ::-1]
    return replace(ds, features=features)


@dataclass(frozen=True)
class BatchPlan:
    """How an epoch is cut into mini-batches.

    With ``stratified`` every batch holds every class, in proportion to the
    class sizes.  Without ``drop_last`` the remainder is spread over the
    batches (stratified) or kept as a short final batch (plain shuffling).
    """

    batch_size: int
    stratified: bool = True
    seed: int = 0
    drop_last: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")


class Batch(NamedTuple):
    features: np.ndarray
    labels: np.ndarray
    indices: np.ndarray


def batch_indices(labels, plan, epoch, class_count=None):
    """Index arrays of one epoch's mini-batches, seeded by ``(plan.seed, epoch)``."""
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    rng = np.random.default_rng([plan.seed, epoch])
    if not plan.stratified:
        order = rng.permutation(n)
        stop = n - n % plan.batch_size if plan.drop_last else n
        return [order[i:i + plan.batch_size] for i in range(0, stop, plan.batch_size)]

    c = class_count if class_count is not None else int(labels.max()) + 1
    if plan.batch_size < c:
        raise ConfigError(f"stratified batches of size {plan.batch_size} cannot hold {c} classes")
    n_batches = n // plan.batch_size
    if n_batches == 0:
        raise ConfigError(f"{n} samples cannot fill a batch of size {plan.batch_size}")
    # interleave classes by fractional rank so contiguous chunks are proportional
    order, keys = [], []
    for j in range(c):
        members = np.flatnonzero(labels == j)
        if members.size == 0:
            raise ConfigError(f"class {j} has no samples; stratified batching impossible")
        order.append(rng.permutation(members))
        keys.append((np.arange(members.size) + 0.5) / members.size)
    order = np.concatenate(order)
    keys = np.concatenate(keys)
    order = order[np.argsort(keys, kind="stable")]
    if plan.drop_last:
        batches = [order[i * plan.batch_size:(i + 1) * plan.batch_size] for i in range(n_batches)]
    else:
        batches = np.array_split(order, n_batches)
    for b, idx in enumerate(batches):
        missing = np.setdiff1d(np.arange(c), labels[idx])
        if missing.size:
            raise ConfigError(f"stratification infeasible: batch {b} lacks classes {missing.tolist()}")
    return batches


def make_batches(ds, plan, epoch):
    """One epoch of :class:`Batch` tuples (features, labels, original indices)."""
    return [Batch(ds.features[idx], ds.labels[idx], idx)
            for idx in batch_indices(ds.labels, plan, epoch, ds.class_count)]


def stratified_split(labels, fraction, seed=0):
    """Split indices into ``(first, second)`` with ``fraction`` of each class in ``second``."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    first, second = [], []
    for j in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == j))
        cut = int(round(fraction * members.size))
        second.append(members[:cut])
        first.append(members[cut:])
    return np.sort(np.concatenate(first)), np.sort(np.concatenate(second))


SYNTHETIC_KINDS = ("gaussians", "multimodal")
_SPLIT_STREAMS = {"train": 1, "val": 2, "test": 3}


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a synthetic dataset.

    ``gaussians``: one unit-variance spherical Gaussian per class.
    ``multimodal``: each class is an equal mixture of two unit-variance
    blobs on opposite sides of the origin, so all class means coincide.
    ``separation`` is the distance between the closest centres of
    different classes.
    """

    kind: str = "gaussians"
    classes: int = 3
    per_class: int = 200
    dim: int = 10
    separation: float = 6.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SYNTHETIC_KINDS:
            raise ConfigError(f"unknown synthetic kind {self.kind!r}; expected one of {SYNTHETIC_KINDS}")
        if self.classes < 2 or self.per_class < 1 or self.dim < 1 or self.separation < 0:
            raise ConfigError("synthetic spec needs classes >= 2, per_class >= 1, dim >= 1, separation >= 0")

    _ALIASES = {"c": "classes", "n": "per_class", "d": "dim", "sep": "separation"}

    @classmethod
    def parse(cls, text):
        """Parse ``"kind:key=value,..."``, e.g. ``"gaussians:c=3,n=200,d=10,sep=6,seed=0"``."""
        kind, _, rest = text.partition(":")
        kwargs = {"kind": kind.strip()}
        for item in filter(None, (s.strip() for s in rest.split(","))):
            key, eq, value = item.partition("=")
            if not eq:
                raise ConfigError(f"bad synthetic spec item {item!r}; expected key=value")
            key = cls._ALIASES.get(key.strip(), key.strip())
            if key not in ("classes", "per_class", "dim", "separation", "seed"):
                raise ConfigError(f"unknown synthetic spec key {key!r}")
            try:
                kwargs[key] = float(value) if key == "separation" else int(value)
            except ValueError:
                raise ConfigError(f"bad value for {key}: {value!r}") from None
        return cls(**kwargs)

    def format(self):
        return (f"{self.kind}:c={self.classes},n={self.per_class},d={self.dim},"
                f"sep={self.separation:g},seed={self.seed}")


def _directions(rng, count, dim):
    if count <= dim:
        q, r = np.linalg.qr(rng.normal(size=(dim, count)))
        return (q * np.sign(np.diag(r))).T
    u = rng.normal(size=(count, dim))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def _class_gap(centres, owner):
    d = np.linalg.norm(centres[:, None] - centres[None, :], axis=2)
    return d[owner[:, None] != owner[None, :]].min()


def make_synthetic(spec, split="train"):
    """Sample a synthetic :class:`Dataset`.

    The class layout depends only on ``spec.seed``; the samples also depend
    on ``split``, so train and test splits share centres but not points.
    """
    layout = np.random.default_rng([spec.seed, 0])
    c, d = spec.classes, spec.dim
    axes = _directions(layout, c, d)
    if spec.kind == "gaussians":
        centres, owner = axes, np.arange(c)
    else:
        centres, owner = np.concatenate([axes, -axes]), np.tile(np.arange(c), 2)
    gap = _class_gap(centres, owner)
    centres = centres * (spec.separation / gap if gap > 0 else 0.0)
    if split not in _SPLIT_STREAMS:
        raise ConfigError(f"unknown split {split!r}")
    rng = np.random.default_rng([spec.seed, _SPLIT_STREAMS[split]])
    features, labels = [], []
    for j in range(c):
        idx = np.flatnonzero(owner == j)
        # split the class between its centres as evenly as possible
        sizes = np.full(idx.size, spec.per_class // idx.size)
        sizes[: spec.per_class % idx.size] += 1
        for centre, size in zip(idx, sizes):
            features.append(centres[centre] + rng.normal(size=(size, d)))
            labels.append(np.full(size, j))
    return Dataset(np.concatenate(features), np.concatenate(labels), split=split,
                   provenance=f"synthetic:{spec.format()}", class_count=c)
