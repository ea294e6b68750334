"""A small sigmoid CNN for 15x15 stock images, written directly in numpy.

Layer stack (channels-last, batch first)::

    15x15x1 -conv 4x4x32-> 12x12x32 -conv 4x4x64-> 9x9x64 -maxpool 2-> 4x4x64
    -flatten-> 1024 -dense-> 128 -dropout 0.3-> -dense-> 3 -softmax

Convolutions are valid (no padding), stride 1.  Sigmoid follows every
learnable layer except the output, which feeds a softmax/cross-entropy loss.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

log = logging.getLogger(__name__)

IMAGE_SIZE = 15
KERNEL = 4
CONV1_FILTERS = 32
CONV2_FILTERS = 64
POOL = 2
HIDDEN = 128
N_CLASSES = 3
DROPOUT = 0.3
FLATTEN = 1024

PARAM_ORDER = ("conv1_w", "conv1_b", "conv2_w", "conv2_b",
               "dense1_w", "dense1_b", "dense2_w", "dense2_b")
CHECKPOINT_VERSION = 1


def sigmoid(z):
    # tanh form never overflows.
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels) -> np.ndarray:
    """Per-sample -log softmax(logits)[label], computed stably."""
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(labels)
    m = logits.max(axis=-1)
    lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=-1))
    return lse - logits[np.arange(len(labels)), labels]


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    n, h, w, c = x.shape
    win = sliding_window_view(x, (k, k), axis=(1, 2))  # n, oh, ow, c, k, k
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * (h - k + 1) * (w - k + 1), k * k * c)


def conv2d_linear(x, filters, biases):
    """Valid cross-correlation plus bias; returns (pre-activation, im2col matrix)."""
    x = np.asarray(x)
    kh, kw, c, f = filters.shape
    if x.ndim != 4 or x.shape[3] != c or kh != kw:
        raise ValueError(f"input {x.shape} incompatible with filters {filters.shape}")
    n, h, w, _ = x.shape
    if h < kh or w < kw:
        raise ValueError(f"input {h}x{w} smaller than kernel {kh}x{kw}")
    cols = _im2col(x, kh)
    z = cols @ filters.reshape(-1, f) + biases
    return z.reshape(n, h - kh + 1, w - kw + 1, f), cols


def conv2d_forward(x, filters, biases) -> np.ndarray:
    """Sigmoid(valid conv + bias).  ``x`` is HxWxC or NxHxWxC."""
    x = np.asarray(x, dtype=filters.dtype)
    single = x.ndim == 3
    z, _ = conv2d_linear(x[None] if single else x, filters, biases)
    a = sigmoid(z)
    return a[0] if single else a


def conv2d_backward(dz, cols, filters, input_shape, need_dx=True):
    kh, kw, c, f = filters.shape
    dz2 = dz.reshape(-1, f)
    dw = (cols.T @ dz2).reshape(filters.shape)
    db = dz2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    n, oh, ow, _ = dz.shape
    dcols = (dz2 @ filters.reshape(-1, f).T).reshape(n, oh, ow, kh, kw, c)
    dx = np.zeros(input_shape, dtype=dz.dtype)
    for a in range(kh):
        for b in range(kw):
            dx[:, a:a + oh, b:b + ow, :] += dcols[:, :, :, a, b, :]
    return dx, dw, db


def maxpool_forward(x):
    """2x2/stride-2 max pool; drops a trailing odd row/column.

    Returns ``(pooled, argmax)`` where ``argmax`` indexes the 4 block cells in
    row-major order (first maximum wins ties).
    """
    x = np.asarray(x)
    single = x.ndim == 3
    if single:
        x = x[None]
    n, h, w, f = x.shape
    if h < POOL or w < POOL:
        raise ValueError("pooling input must be at least 2x2")
    oh, ow = h // POOL, w // POOL
    blocks = (x[:, :oh * POOL, :ow * POOL]
              .reshape(n, oh, POOL, ow, POOL, f)
              .transpose(0, 1, 3, 5, 2, 4)
              .reshape(n, oh, ow, f, POOL * POOL))
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    if single:
        return out[0], arg[0]
    return out, arg


def maxpool_backward(dout, arg, input_shape):
    n, h, w, f = input_shape
    oh, ow = dout.shape[1:3]
    dblocks = np.zeros((n, oh, ow, f, POOL * POOL), dtype=dout.dtype)
    np.put_along_axis(dblocks, arg[..., None], dout[..., None], axis=-1)
    dx = np.zeros(input_shape, dtype=dout.dtype)
    dx[:, :oh * POOL, :ow * POOL] = (dblocks.reshape(n, oh, ow, f, POOL, POOL)
                                     .transpose(0, 1, 4, 2, 5, 3)
                                     .reshape(n, oh * POOL, ow * POOL, f))
    return dx


def expected_shape_chain(size: int = IMAGE_SIZE) -> list[tuple[int, ...]]:
    s1 = size - KERNEL + 1
    s2 = s1 - KERNEL + 1
    s3 = s2 // POOL
    return [(s1, s1, CONV1_FILTERS), (s2, s2, CONV2_FILTERS), (s3, s3, CONV2_FILTERS),
            (s3 * s3 * CONV2_FILTERS,), (HIDDEN,), (N_CLASSES,)]


@dataclass
class Cache:
    x: np.ndarray
    conv1: np.ndarray
    cols1: np.ndarray
    conv2: np.ndarray
    cols2: np.ndarray
    pooled: np.ndarray
    pool_arg: np.ndarray
    flat: np.ndarray
    hidden: np.ndarray
    mask: np.ndarray | None
    dropped: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


class CnnModel:
    """Parameters of the network plus forward/backward passes."""

    def __init__(self, params: dict[str, np.ndarray], dropout_rate: float = DROPOUT,
                 seed: int | None = None, dtype=np.float64):
        if expected_shape_chain()[3] != (FLATTEN,):
            raise AssertionError("architecture constants do not flatten to 1024")
        shapes = self.param_shapes()
        missing = set(PARAM_ORDER) - set(params)
        if missing:
            raise ValueError(f"missing parameters: {sorted(missing)}")
        self.dtype = np.dtype(dtype)
        if self.dtype not in (np.float32, np.float64):
            raise ValueError(f"unsupported dtype {self.dtype}")
        self.params = {}
        for name in PARAM_ORDER:
            p = np.array(params[name], dtype=self.dtype)
            if p.shape != shapes[name]:
                raise ValueError(f"{name} has shape {p.shape}, expected {shapes[name]}")
            self.params[name] = p
        if not 0.0 <= dropout_rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.dropout_rate = dropout_rate
        self.seed = seed

    @staticmethod
    def param_shapes() -> dict[str, tuple[int, ...]]:
        return {
            "conv1_w": (KERNEL, KERNEL, 1, CONV1_FILTERS),
            "conv1_b": (CONV1_FILTERS,),
            "conv2_w": (KERNEL, KERNEL, CONV1_FILTERS, CONV2_FILTERS),
            "conv2_b": (CONV2_FILTERS,),
            "dense1_w": (FLATTEN, HIDDEN),
            "dense1_b": (HIDDEN,),
            "dense2_w": (HIDDEN, N_CLASSES),
            "dense2_b": (N_CLASSES,),
        }

    @classmethod
    def initialize(cls, seed: int = 0, dropout_rate: float = DROPOUT, dtype=np.float64) -> "CnnModel":
        """Fan-in scaled uniform weights (variance 1/fan_in), zero biases."""
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in cls.param_shapes().items():
            if name.endswith("_b"):
                params[name] = np.zeros(shape)
            else:
                fan_in = int(np.prod(shape[:-1]))
                limit = math.sqrt(3.0 / fan_in)
                params[name] = rng.uniform(-limit, limit, size=shape)
        return cls(params, dropout_rate, seed, dtype)

    def copy(self) -> "CnnModel":
        return CnnModel({k: v.copy() for k, v in self.params.items()}, self.dropout_rate, self.seed, self.dtype)

    def astype(self, dtype) -> "CnnModel":
        return CnnModel(self.params, self.dropout_rate, self.seed, dtype)

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    # -- forward / backward ------------------------------------------------

    def forward(self, images, training: bool = False, rng: np.random.Generator | None = None,
                mask: np.ndarray | None = None, return_cache: bool = False):
        """Class probabilities for a 15x15 image or an ``(n, 15, 15)`` stack.

        In training mode a dropout mask is drawn from ``rng`` unless ``mask``
        (already scaled by ``1/(1 - rate)``) is given.
        """
        x = np.asarray(images, dtype=self.dtype)
        single = x.ndim == 2
        if single:
            x = x[None]
        if x.shape[1:] != (IMAGE_SIZE, IMAGE_SIZE):
            raise ValueError(f"expected {IMAGE_SIZE}x{IMAGE_SIZE} images, got {x.shape[1:]}")
        x = x[..., None]
        p = self.params

        z1, cols1 = conv2d_linear(x, p["conv1_w"], p["conv1_b"])
        a1 = sigmoid(z1)
        z2, cols2 = conv2d_linear(a1, p["conv2_w"], p["conv2_b"])
        a2 = sigmoid(z2)
        pooled, arg = maxpool_forward(a2)
        flat = pooled.reshape(len(x), -1)
        hidden = sigmoid(flat @ p["dense1_w"] + p["dense1_b"])
        if training and self.dropout_rate > 0:
            if mask is None:
                if rng is None:
                    raise ValueError("training mode needs an rng or an explicit mask")
                keep = rng.random(hidden.shape) >= self.dropout_rate
                mask = (keep / (1.0 - self.dropout_rate)).astype(self.dtype)
            dropped = hidden * mask
        else:
            mask = None
            dropped = hidden
        logits = dropped @ p["dense2_w"] + p["dense2_b"]
        probs = softmax(logits)

        if return_cache:
            cache = Cache(x, a1, cols1, a2, cols2, pooled, arg, flat, hidden, mask, dropped, logits, probs)
            return (probs[0] if single else probs), cache
        return probs[0] if single else probs

    def loss(self, images, labels, **kwargs) -> float:
        _, cache = self.forward(images, return_cache=True, **kwargs)
        return float(cross_entropy(cache.logits, labels).mean())

    def backward(self, cache: Cache, labels, sample_weights=None) -> dict[str, np.ndarray]:
        """Gradients of the mean cross-entropy for the pass recorded in ``cache``."""
        p = self.params
        labels = np.asarray(labels)
        n = len(labels)
        dlogits = cache.probs.copy()
        dlogits[np.arange(n), labels] -= 1.0
        if sample_weights is not None:
            dlogits *= np.asarray(sample_weights)[:, None]
        dlogits /= n

        g = {}
        g["dense2_w"] = cache.dropped.T @ dlogits
        g["dense2_b"] = dlogits.sum(axis=0)
        dhidden = dlogits @ p["dense2_w"].T
        if cache.mask is not None:
            dhidden = dhidden * cache.mask
        dz3 = dhidden * cache.hidden * (1.0 - cache.hidden)
        g["dense1_w"] = cache.flat.T @ dz3
        g["dense1_b"] = dz3.sum(axis=0)
        dpooled = (dz3 @ p["dense1_w"].T).reshape(cache.pooled.shape)
        da2 = maxpool_backward(dpooled, cache.pool_arg, cache.conv2.shape)
        dz2 = da2 * cache.conv2 * (1.0 - cache.conv2)
        da1, g["conv2_w"], g["conv2_b"] = conv2d_backward(dz2, cache.cols2, p["conv2_w"], cache.conv1.shape)
        dz1 = da1 * cache.conv1 * (1.0 - cache.conv1)
        _, g["conv1_w"], g["conv1_b"] = conv2d_backward(dz1, cache.cols1, p["conv1_w"], cache.x.shape,
                                                        need_dx=False)
        return {k: g[k] for k in PARAM_ORDER}

    def loss_and_grads(self, images, labels, training=False, rng=None, mask=None, sample_weights=None):
        _, cache = self.forward(images, training=training, rng=rng, mask=mask, return_cache=True)
        labels = np.asarray(labels)
        ce = cross_entropy(cache.logits, labels)
        if sample_weights is not None:
            ce = ce * np.asarray(sample_weights)
        return float(ce.mean()), self.backward(cache, labels, sample_weights)

    def predict_proba(self, images) -> np.ndarray:
        return self.forward(images, training=False)

    def predict(self, images):
        """Argmax label(s); ties go to the lower class index."""
        probs = self.predict_proba(images)
        return probs_to_label(probs)

    # -- checkpoints ---------------------------------------------------------

    def save(self, path, config: "TrainConfig | None" = None, extra: dict | None = None) -> None:
        header = {
            "format": "stockcnn.cnn",
            "version": CHECKPOINT_VERSION,
            "architecture": {
                "image_size": IMAGE_SIZE, "kernel": KERNEL, "conv1_filters": CONV1_FILTERS,
                "conv2_filters": CONV2_FILTERS, "pool": POOL, "flatten": FLATTEN,
                "hidden": HIDDEN, "classes": N_CLASSES,
            },
            "param_order": list(PARAM_ORDER),
            "dropout_rate": self.dropout_rate,
            "dtype": self.dtype.name,
            "seed": self.seed,
            "config": asdict(config) if config is not None else None,
            "extra": extra or {},
        }
        with Path(path).open("wb") as fh:
            np.savez(fh, header=np.array(json.dumps(header)), **self.params)

    @classmethod
    def load(cls, path) -> "CnnModel":
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            if header.get("format") != "stockcnn.cnn" or header.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} CNN checkpoint")
            if header["param_order"] != list(PARAM_ORDER):
                raise ValueError(f"{path}: parameter order mismatch")
            params = {k: data[k] for k in PARAM_ORDER}
        return cls(params, header["dropout_rate"], header["seed"], params["conv1_w"].dtype)


def probs_to_label(probs):
    probs = np.asarray(probs)
    labels = np.argmax(probs, axis=-1)
    return int(labels) if labels.ndim == 0 else labels


def predict(model: CnnModel, image):
    return model.predict(image)


# -- training --------------------------------------------------------------


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 200
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    patience: int = 20
    validation_fraction: float = 0.1
    class_weighting: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = -1


class Adam:
    def __init__(self, params, lr, beta1, beta2, eps):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k in PARAM_ORDER:
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * grads[k]
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * grads[k] ** 2
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class SGD:
    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params, grads):
        for k in PARAM_ORDER:
            params[k] -= self.lr * grads[k]


def _class_weights(labels) -> np.ndarray:
    counts = np.bincount(labels, minlength=N_CLASSES).astype(np.float64)
    present = counts > 0
    w = np.zeros(N_CLASSES)
    w[present] = len(labels) / (present.sum() * counts[present])
    return w


def _evaluate(model, images, labels, batch=512):
    if len(labels) == 0:
        return float("nan"), float("nan")
    losses, correct = 0.0, 0
    for s in range(0, len(labels), batch):
        _, cache = model.forward(images[s:s + batch], return_cache=True)
        y = labels[s:s + batch]
        losses += float(cross_entropy(cache.logits, y).sum())
        correct += int((cache.logits.argmax(axis=1) == y).sum())
    return losses / len(labels), correct / len(labels)


def train(model: CnnModel, data, config: TrainConfig | None = None) -> tuple[CnnModel, History]:
    """Mini-batch training with early stopping on a chronological validation tail.

    ``data`` is a :class:`~stockcnn.dataset.Dataset` (or an ``(images,
    labels)`` pair) in date order; the last ``validation_fraction`` of it is
    held out.  Returns a new model carrying the best-validation parameters;
    the input model is left untouched.
    """
    config = config or TrainConfig()
    images, labels = (data.images, data.labels) if hasattr(data, "images") else data
    images = np.asarray(images, dtype=config.dtype)
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise ValueError("cannot train on an empty dataset")
    n_val = int(math.floor(len(labels) * config.validation_fraction))
    if n_val and len(labels) - n_val < 1:
        n_val = 0
    n_fit = len(labels) - n_val
    x_fit, y_fit = images[:n_fit], labels[:n_fit]
    x_val, y_val = images[n_fit:], labels[n_fit:]

    model = model.astype(config.dtype)
    rng = np.random.default_rng(config.seed)
    if config.optimizer == "adam":
        opt = Adam(model.params, config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    else:
        opt = SGD(model.params, config.learning_rate)
    weights = _class_weights(y_fit) if config.class_weighting else None

    history = History()
    best_loss = math.inf
    best_params = {k: v.copy() for k, v in model.params.items()}
    stale = 0
    for epoch in range(config.max_epochs):
        order = rng.permutation(n_fit)
        for s in range(0, n_fit, config.batch_size):
            b = order[s:s + config.batch_size]
            sw = None if weights is None else weights[y_fit[b]]
            loss, grads = model.loss_and_grads(x_fit[b], y_fit[b], training=True, rng=rng, sample_weights=sw)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch + 1}, batch starting {s}; "
                    f"lr={config.learning_rate}, max |param|="
                    f"{max(float(np.abs(v).max()) for v in model.params.values()):.3g}"
                )
            opt.step(model.params, grads)

        tr_loss, tr_acc = _evaluate(model, x_fit, y_fit)
        history.train_loss.append(tr_loss)
        history.train_accuracy.append(tr_acc)
        if n_val:
            va_loss, va_acc = _evaluate(model, x_val, y_val)
            history.val_loss.append(va_loss)
            history.val_accuracy.append(va_acc)
            monitored = va_loss
        else:
            monitored = tr_loss
        if not math.isfinite(monitored):
            raise TrainingDivergedError(f"non-finite loss after epoch {epoch + 1}")
        log.debug("epoch %d train_loss %.5f monitored %.5f", epoch + 1, tr_loss, monitored)

        if monitored < best_loss:
            best_loss = monitored
            best_params = {k: v.copy() for k, v in model.params.items()}
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    model.params = best_params
    return model, history


def relative_error(a, b, floor: float = 1e-6):
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
