"""One-vs-rest linear regression with an L1 penalty, fitted by proximal gradient."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

N_CLASSES = 3
CHECKPOINT_VERSION = 1


def soft_threshold(x, t):
    """sign(x) * max(|x| - t, 0)."""
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def power_iteration(a: np.ndarray, iters: int = 50, seed: int = 0) -> float:
    """Largest eigenvalue of a symmetric PSD matrix."""
    v = np.random.default_rng(seed).standard_normal(a.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = a @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        lam = float(v @ a @ v)
    return lam


@dataclass
class LassoConfig:
    tol: float = 1e-8
    max_iter: int = 10_000
    power_iters: int = 50
    seed: int = 0


@dataclass
class LinearModel:
    weights: np.ndarray           # (3, n_features)
    biases: np.ndarray            # (3,)
    lam: float
    objective_history: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.biases))):
            raise ValueError("non-finite model parameters")

    def scores(self, images) -> np.ndarray:
        x = np.asarray(images, dtype=np.float64)
        x = x.reshape(-1, self.weights.shape[1]) if x.ndim > 1 else x[None]
        return x @ self.weights.T + self.biases

    def predict(self, images):
        """Argmax of the affine scores; ties go to the lower class index."""
        images = np.asarray(images)
        labels = self.scores(images).argmax(axis=1)
        # A lone image is 1-D (flattened) or 2-D but not a (batch, features) matrix.
        single = images.ndim == 1 or (images.ndim == 2 and images.shape[1] != self.weights.shape[1])
        return int(labels[0]) if single else labels

    def save(self, path) -> None:
        header = {"format": "stockcnn.lasso", "version": CHECKPOINT_VERSION, "lambda": self.lam,
                  "n_features": int(self.weights.shape[1]), "param_order": ["weights", "biases"]}
        with Path(path).open("wb") as fh:
            np.savez(fh, header=np.array(json.dumps(header)), weights=self.weights, biases=self.biases)

    @classmethod
    def load(cls, path) -> "LinearModel":
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            if header.get("format") != "stockcnn.lasso" or header.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} lasso checkpoint")
            return cls(data["weights"], data["biases"], header["lambda"])


def predict_linear(model: LinearModel, image):
    return model.predict(image)


def lasso_objective(x, y, w, b, lam) -> float:
    r = y - x @ w - b
    return float(r @ r / (2 * len(y)) + lam * np.abs(w).sum())


def lasso_path(x: np.ndarray, y: np.ndarray, lam: float, config: LassoConfig | None = None):
    """Minimize ||y - Xw - b||^2/(2n) + lam*||w||_1 with an unpenalized intercept.

    ISTA with step 1/L, L estimated by power iteration on X'X/n of the centered
    design; L is doubled whenever a step would raise the objective, so the
    objective sequence is non-increasing.  Returns ``(w, b, objectives)``.
    """
    config = config or LassoConfig()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = x.shape
    x_mean, y_mean = x.mean(axis=0), y.mean()
    xc, yc = x - x_mean, y - y_mean
    gram = xc.T @ xc / n
    xty = xc.T @ yc / n
    L = power_iteration(gram, config.power_iters, config.seed)

    def objective(w):
        r = yc - xc @ w
        return float(r @ r / (2 * n) + lam * np.abs(w).sum())

    w = np.zeros(p)
    history = [objective(w)]
    if L <= 0.0:
        return w, y_mean, history
    for _ in range(config.max_iter):
        grad = gram @ w - xty
        while True:
            w_new = soft_threshold(w - grad / L, lam / L)
            f_new = objective(w_new)
            if f_new <= history[-1] or L > 1e300:
                break
            L *= 2.0
        change = abs(history[-1] - f_new)
        w = w_new
        history.append(f_new)
        if change <= config.tol * max(abs(history[-2]), 1e-300):
            break
    b = float(y_mean - x_mean @ w)
    return w, b, history


def fit_lasso(data, lam: float = 0.01, config: LassoConfig | None = None) -> LinearModel:
    """Fit one regression per class onto +1 (that class) / -1 (the rest) targets.

    ``data`` is a dataset with ``images``/``labels`` or an ``(images, labels)``
    pair.
    """
    images, labels = (data.images, data.labels) if hasattr(data, "images") else data
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise ValueError("cannot fit on an empty dataset")
    x = images.reshape(len(labels), -1)
    weights = np.zeros((N_CLASSES, x.shape[1]))
    biases = np.zeros(N_CLASSES)
    histories = []
    for k in range(N_CLASSES):
        y = np.where(labels == k, 1.0, -1.0)
        weights[k], biases[k], hist = lasso_path(x, y, lam, config)
        histories.append(hist)
    return LinearModel(weights, biases, lam, histories)
