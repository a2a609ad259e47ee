"""A small feed-forward network with hand-written backpropagation.

Layers keep their trainable tensors in ``params`` and non-trainable state
(batch-norm running statistics) in ``buffers``.  ``Network.forward`` returns
the output plus a cache that ``Network.backward`` consumes; a cache is
invalidated as soon as the parameters are updated.
"""

import json
import struct
import zlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DataFormatError, StaleCacheError

__all__ = [
    "Dense",
    "Conv2d",
    "BatchNorm",
    "ReLU",
    "Tanh",
    "Sigmoid",
    "Dropout",
    "MaxPool2d",
    "GlobalAvgPool",
    "Flatten",
    "Network",
    "TrainConfig",
    "lr_at",
    "sgd_nesterov_step",
    "mlp",
    "dorfernet_mini",
    "build_preset",
    "save_checkpoint",
    "load_checkpoint",
]


def _uniform_init(rng, fan_in, shape):
    limit = np.sqrt(3.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """Base class; subclasses override ``forward`` and ``backward``."""

    def __init__(self):
        self.params = {}
        self.buffers = {}

    def config(self):
        return {}

    def forward(self, x, train, rng):
        raise NotImplementedError

    def backward(self, cache, grad):
        raise NotImplementedError

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.config().items())
        return f"{type(self).__name__}({args})"


class Dense(Layer):
    def __init__(self, in_features, out_features, rng=None):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = _uniform_init(rng, in_features, (in_features, out_features))
        self.params["b"] = np.zeros(out_features)

    def config(self):
        return {"in_features": self.in_features, "out_features": self.out_features}

    def forward(self, x, train, rng):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ValueError(f"Dense expects (n, {self.in_features}) input, got {x.shape}")
        return x @ self.params["W"] + self.params["b"], x

    def backward(self, x, grad):
        grads = {"W": x.T @ grad, "b": grad.sum(axis=0)}
        return grad @ self.params["W"].T, grads


class Conv2d(Layer):
    """Stride-1 2-D convolution on ``(n, channels, h, w)`` input via im2col."""

    def __init__(self, in_channels, out_channels, kernel_size=3, padding=1, rng=None):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.padding = padding
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * kernel_size * kernel_size
        self.params["W"] = _uniform_init(
            rng, fan_in, (out_channels, in_channels, kernel_size, kernel_size))
        self.params["b"] = np.zeros(out_channels)

    def config(self):
        return {"in_channels": self.in_channels, "out_channels": self.out_channels,
                "kernel_size": self.kernel_size, "padding": self.padding}

    def forward(self, x, train, rng):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(f"Conv2d expects (n, {self.in_channels}, h, w) input, got {x.shape}")
        k, p = self.kernel_size, self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        n, c, h, w = xp.shape
        ho, wo = h - k + 1, w - k + 1
        if ho < 1 or wo < 1:
            raise ValueError(f"input {x.shape[2:]} too small for a {k}x{k} kernel with padding {p}")
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
        out = cols @ self.params["W"].reshape(self.out_channels, -1).T + self.params["b"]
        out = out.reshape(n, ho, wo, self.out_channels).transpose(0, 3, 1, 2)
        return out, (cols, xp.shape)

    def backward(self, cache, grad):
        cols, padded_shape = cache
        n, c, h, w = padded_shape
        k, p = self.kernel_size, self.padding
        ho, wo = grad.shape[2], grad.shape[3]
        g = grad.transpose(0, 2, 3, 1).reshape(-1, self.out_channels)
        W = self.params["W"].reshape(self.out_channels, -1)
        grads = {"W": (g.T @ cols).reshape(self.params["W"].shape), "b": g.sum(axis=0)}
        dcols = (g @ W).reshape(n, ho, wo, c, k, k)
        dxp = np.zeros(padded_shape)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + ho, j:j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, p:h - p, p:w - p], grads


class BatchNorm(Layer):
    """Batch normalization over features (2-D input) or channels (4-D input)."""

    def __init__(self, num_features, momentum=0.9, eps=1e-5):
        super().__init__()
        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(num_features)
        self.params["beta"] = np.zeros(num_features)
        self.buffers["running_mean"] = np.zeros(num_features)
        self.buffers["running_var"] = np.ones(num_features)

    def config(self):
        return {"num_features": self.num_features, "momentum": self.momentum, "eps": self.eps}

    @staticmethod
    def _flat(x):
        if x.ndim == 4:
            return x.transpose(0, 2, 3, 1).reshape(-1, x.shape[1])
        return x

    @staticmethod
    def _unflat(x2, shape):
        if len(shape) == 4:
            n, c, h, w = shape
            return x2.reshape(n, h, w, c).transpose(0, 3, 1, 2)
        return x2

    def forward(self, x, train, rng):
        x2 = self._flat(x)
        if x2.shape[1] != self.num_features:
            raise ValueError(f"BatchNorm expects {self.num_features} features, got {x2.shape[1]}")
        if train:
            mean = x2.mean(axis=0)
            var = x2.var(axis=0)
            m = x2.shape[0]
            self.buffers["running_mean"] = (self.momentum * self.buffers["running_mean"]
                                            + (1 - self.momentum) * mean)
            unbiased = var * m / max(m - 1, 1)
            self.buffers["running_var"] = (self.momentum * self.buffers["running_var"]
                                           + (1 - self.momentum) * unbiased)
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x2 - mean) * inv_std
        out = xhat * self.params["gamma"] + self.params["beta"]
        return self._unflat(out, x.shape), (xhat, inv_std, x.shape, train)

    def backward(self, cache, grad):
        xhat, inv_std, shape, train = cache
        g = self._flat(grad)
        grads = {"gamma": (g * xhat).sum(axis=0), "beta": g.sum(axis=0)}
        dxhat = g * self.params["gamma"]
        if train:
            m = g.shape[0]
            dx = inv_std / m * (m * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        else:
            dx = dxhat * inv_std
        return self._unflat(dx, shape), grads


class ReLU(Layer):
    def forward(self, x, train, rng):
        mask = x > 0
        return x * mask, mask

    def backward(self, mask, grad):
        return grad * mask, {}


class Tanh(Layer):
    def forward(self, x, train, rng):
        out = np.tanh(x)
        return out, out

    def backward(self, out, grad):
        return grad * (1.0 - out * out), {}


class Sigmoid(Layer):
    def forward(self, x, train, rng):
        out = 0.5 * (1.0 + np.tanh(0.5 * x))
        return out, out

    def backward(self, out, grad):
        return grad * out * (1.0 - out), {}


class Dropout(Layer):
    """Inverted dropout; identity in eval mode."""

    def __init__(self, rate=0.5):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate

    def config(self):
        return {"rate": self.rate}

    def forward(self, x, train, rng):
        if not train or self.rate == 0.0:
            return x, None
        if rng is None:
            raise ValueError("train-mode dropout needs a random generator")
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * mask, mask

    def backward(self, mask, grad):
        return (grad if mask is None else grad * mask), {}


class MaxPool2d(Layer):
    """Non-overlapping 2x2 max pooling; odd trailing rows/columns are dropped."""

    def forward(self, x, train, rng):
        n, c, h, w = x.shape
        ho, wo = h // 2, w // 2
        xr = (x[:, :, :2 * ho, :2 * wo].reshape(n, c, ho, 2, wo, 2)
              .transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4))
        idx = np.argmax(xr, axis=-1)[..., None]
        return np.take_along_axis(xr, idx, axis=-1)[..., 0], (idx, x.shape)

    def backward(self, cache, grad):
        idx, shape = cache
        n, c, h, w = shape
        ho, wo = h // 2, w // 2
        g = np.zeros((n, c, ho, wo, 4))
        np.put_along_axis(g, idx, grad[..., None], axis=-1)
        g = g.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
        dx = np.zeros(shape)
        dx[:, :, :2 * ho, :2 * wo] = g
        return dx, {}


class GlobalAvgPool(Layer):
    def forward(self, x, train, rng):
        return x.mean(axis=(2, 3)), x.shape

    def backward(self, shape, grad):
        n, c, h, w = shape
        return np.broadcast_to(grad[:, :, None, None] / (h * w), shape).copy(), {}


class Flatten(Layer):
    def forward(self, x, train, rng):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, shape, grad):
        return grad.reshape(shape), {}


LAYER_TYPES = {cls.__name__: cls for cls in
               (Dense, Conv2d, BatchNorm, ReLU, Tanh, Sigmoid, Dropout, MaxPool2d,
                GlobalAvgPool, Flatten)}


@dataclass
class _Cache:
    entries: list
    version: int
    train: bool


class Network:
    """An ordered stack of layers plus the optimizer velocity."""

    def __init__(self, layers):
        self.layers = list(layers)
        self.velocity = {name: np.zeros_like(p) for name, p in self.parameters().items()}
        self._version = 0

    def parameters(self):
        """Trainable tensors keyed ``"<layer index>.<name>"`` (live references)."""
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.params.items()}

    def buffers(self):
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.buffers.items()}

    def state(self):
        return {**self.parameters(), **self.buffers()}

    def load_state(self, state):
        for i, layer in enumerate(self.layers):
            for store in (layer.params, layer.buffers):
                for k in store:
                    key = f"{i}.{k}"
                    if key not in state:
                        raise KeyError(f"missing tensor {key}")
                    if state[key].shape != store[k].shape:
                        raise ValueError(f"tensor {key}: shape {state[key].shape} != {store[k].shape}")
                    store[k] = np.array(state[key], dtype=np.float64)
        self.touch()

    def copy_state(self):
        return {k: v.copy() for k, v in self.state().items()}

    def touch(self):
        """Mark parameters as changed, invalidating outstanding caches."""
        self._version += 1

    def forward(self, x, mode="eval", rng=None):
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        train = mode == "train"
        entries = []
        out = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            out, cache = layer.forward(out, train, rng)
            entries.append(cache)
        return out, _Cache(entries, self._version, train)

    def predict(self, x, batch_size=512):
        """Eval-mode outputs, computed in chunks."""
        x = np.asarray(x, dtype=np.float64)
        outs = [self.forward(x[i:i + batch_size], "eval")[0] for i in range(0, len(x), batch_size)]
        return np.concatenate(outs, axis=0)

    def backward(self, cache, grad_out):
        """Parameter gradients (same keys as :meth:`parameters`) and the input gradient."""
        if cache.version != self._version:
            raise StaleCacheError("forward cache predates the latest parameter update")
        grads = {}
        grad = np.asarray(grad_out, dtype=np.float64)
        for i in range(len(self.layers) - 1, -1, -1):
            grad, layer_grads = self.layers[i].backward(cache.entries[i], grad)
            for k, g in layer_grads.items():
                grads[f"{i}.{k}"] = g
        return grads, grad

    def manifest(self):
        return [{"type": type(layer).__name__, "config": layer.config()} for layer in self.layers]

    @classmethod
    def from_manifest(cls, manifest):
        layers = []
        for entry in manifest:
            if entry["type"] not in LAYER_TYPES:
                raise DataFormatError(f"unknown layer type {entry['type']!r}")
            layers.append(LAYER_TYPES[entry["type"]](**entry["config"]))
        return cls(layers)

    def __repr__(self):
        return "Network(\n" + "\n".join(f"  {layer!r}" for layer in self.layers) + "\n)"


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule settings."""

    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_halving_period: int = 25
    epochs: int = 100
    batch_size: int = 150
    seed: int = 0
    clip_norm: Optional[float] = None

    def __post_init__(self):
        if self.base_lr <= 0 or self.lr_halving_period <= 0 or self.batch_size <= 0:
            raise ConfigError("base_lr, lr_halving_period and batch_size must be positive")
        if self.momentum < 0 or self.weight_decay < 0 or self.epochs < 0:
            raise ConfigError("momentum, weight_decay and epochs must be non-negative")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive when set")


def lr_at(epoch, cfg):
    """Learning rate halved every ``cfg.lr_halving_period`` epochs."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return cfg.base_lr * 0.5 ** (epoch // cfg.lr_halving_period)


def sgd_nesterov_step(net, grads, cfg, epoch, lr=None):
    """One SGD step with Nesterov momentum, applied in place.

    Weight decay is added to every gradient first; then
    ``v <- mu v - lr g`` and ``w <- w + mu v - lr g``.  With
    ``cfg.clip_norm`` set, the raw gradients are first rescaled so their
    global norm does not exceed it.
    """
    lr = lr_at(epoch, cfg) if lr is None else lr
    mu = cfg.momentum
    params = net.parameters()
    if cfg.clip_norm is not None:
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if norm > cfg.clip_norm:
            grads = {k: g * (cfg.clip_norm / norm) for k, g in grads.items()}
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ValueError(f"gradient {name}: shape {g.shape} != {w.shape}")
        g = g + cfg.weight_decay * w
        v = net.velocity[name]
        v *= mu
        v -= lr * g
        w += mu * v - lr * g
    net.touch()


def mlp(in_features, out_features, hidden=(256, 256), rng=None, output_bn=True):
    """Dense-ReLU blocks, then a dense output layer (batch-normalized by default)."""
    rng = rng if rng is not None else np.random.default_rng(0)
    layers, width = [], in_features
    for h in hidden:
        layers += [Dense(width, h, rng=rng), ReLU()]
        width = h
    layers.append(Dense(width, out_features, rng=rng))
    if output_bn:
        layers.append(BatchNorm(out_features))
    return Network(layers)


def dorfernet_mini(in_channels, out_features, width_divisor=8, rng=None):
    """The DorferNet block structure with channel counts divided by ``width_divisor``.

    Expects square inputs of at least 24 pixels (three 2x2 poolings followed
    by an unpadded 3x3 convolution).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    ch = [max(1, w // width_divisor) for w in (64, 128, 256, 1024)]
    layers, width = [], in_channels

    def conv(out, k, pad):
        nonlocal width
        layers.extend([Conv2d(width, out, k, pad, rng=rng), BatchNorm(out), ReLU()])
        width = out

    for block, reps in ((0, 2), (1, 2), (2, 4)):
        for _ in range(reps):
            conv(ch[block], 3, 1)
        layers += [MaxPool2d(), Dropout(0.25)]
    conv(ch[3], 3, 0)
    layers.append(Dropout(0.5))
    conv(ch[3], 1, 0)
    layers.append(Dropout(0.5))
    conv(out_features, 1, 0)
    layers.append(GlobalAvgPool())
    return Network(layers)


PRESETS = ("mlp", "dorfernet-mini")


def build_preset(name, input_shape, out_features, seed=0, hidden=(256, 256)):
    """Build a named architecture for inputs of shape ``input_shape`` (without the batch axis)."""
    rng = np.random.default_rng(seed)
    if name == "mlp":
        return mlp(int(np.prod(input_shape)), out_features, hidden=hidden, rng=rng)
    if name == "dorfernet-mini":
        if len(input_shape) != 3:
            raise ConfigError("dorfernet-mini needs image input (channels, h, w)")
        return dorfernet_mini(input_shape[0], out_features, rng=rng)
    raise ConfigError(f"unknown network preset {name!r}; expected one of {PRESETS}")


# Checkpoint container: b"RDLDA1", u32 manifest length, manifest JSON,
# float32 little-endian tensors in manifest order, u32 CRC32 of everything before it.
_CKPT_MAGIC = b"RDLDA1"


def save_checkpoint(path, net, extra=None, meta=None):
    """Write ``net`` (and optional named ``extra`` arrays) to ``path``."""
    tensors = {**net.state(), **{f"extra/{k}": np.asarray(v) for k, v in (extra or {}).items()}}
    manifest = {
        "format": 1,
        "layers": net.manifest(),
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in tensors.items()],
        "meta": meta or {},
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(v, dtype="<f4").tobytes() for v in tensors.values())
    blob = _CKPT_MAGIC + struct.pack("<I", len(head)) + head + body
    with open(path, "wb") as fh:
        fh.write(blob + struct.pack("<I", zlib.crc32(blob)))


def load_checkpoint(path):
    """Return ``(network, extra, meta)`` from a file written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(_CKPT_MAGIC):
        raise DataFormatError(f"{path}: not an RDLDA1 checkpoint")
    if len(data) < len(_CKPT_MAGIC) + 8:
        raise DataFormatError(f"{path}: truncated checkpoint")
    blob, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(blob) != crc:
        raise DataFormatError(f"{path}: checksum mismatch")
    pos = len(_CKPT_MAGIC)
    (head_len,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    manifest = json.loads(blob[pos:pos + head_len].decode("utf-8"))
    pos += head_len
    tensors = {}
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=pos)
        tensors[entry["name"]] = arr.astype(np.float64).reshape(entry["shape"])
        pos += 4 * count
    if pos != len(blob):
        raise DataFormatError(f"{path}: tensor payload size does not match manifest")
    net = Network.from_manifest(manifest["layers"])
    net.load_state({k: v for k, v in tensors.items() if not k.startswith("extra/")})
    extra = {k[len("extra/"):]: v for k, v in tensors.items() if k.startswith("extra/")}
    return net, extra, manifest["meta"]
