"""Supervised replacement classifiers: logistic head and a small MLP.

Plain numpy full-batch gradient descent; everything is deterministic given
the fit seed. Normalization statistics are frozen at fit time, and finetuning
touches only the output head (for the MLP the hidden layer stays
bit-identical, which downstream tests checksum).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "ClassifierModel",
    "LogisticModel",
    "MlpModel",
    "DegenerateDataError",
    "fit_classifier",
    "finetune_classifier",
    "save_model",
    "load_model",
]


class DegenerateDataError(ValueError):
    """Raised when a training set cannot support fitting (too few samples or
    a single class)."""


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -60.0, 60.0)))


@dataclass
class LogisticModel:
    """Logistic regression over z-normalized features; the whole model is
    its own head."""

    w: np.ndarray
    b: float
    mu: np.ndarray
    sigma: np.ndarray
    heldout_accuracy: float = float("nan")

    kind = "logistic"

    def _norm(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mu) / self.sigma

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return _sigmoid(self._norm(x) @ self.w + self.b)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return (self.predict_proba(x) >= 0.5).astype(np.int64)

    def hidden_checksum(self) -> str:
        return "logistic-no-hidden"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "w": self.w.tolist(),
            "b": self.b,
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
            "heldout_accuracy": self.heldout_accuracy,
        }


@dataclass
class MlpModel:
    """One tanh hidden layer plus a logistic output head."""

    w1: np.ndarray  # (d, h)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (h,)
    b2: float
    mu: np.ndarray
    sigma: np.ndarray
    heldout_accuracy: float = float("nan")

    kind = "small-mlp"

    def _norm(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mu) / self.sigma

    def _hidden(self, x: np.ndarray) -> np.ndarray:
        return np.tanh(self._norm(x) @ self.w1 + self.b1)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return _sigmoid(self._hidden(x) @ self.w2 + self.b2)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return (self.predict_proba(x) >= 0.5).astype(np.int64)

    def hidden_checksum(self) -> str:
        """Byte-level fingerprint of the frozen (non-head) parameters."""
        h = hashlib.sha256()
        h.update(self.w1.tobytes())
        h.update(self.b1.tobytes())
        h.update(self.mu.tobytes())
        h.update(self.sigma.tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "w1": self.w1.tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.tolist(),
            "b2": self.b2,
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
            "heldout_accuracy": self.heldout_accuracy,
        }


ClassifierModel = LogisticModel | MlpModel


def _extract(samples) -> tuple[np.ndarray, np.ndarray]:
    x = np.array([s.features for s in samples], dtype=np.float64)
    y = np.array([s.label for s in samples], dtype=np.float64)
    return x, y


def fit_classifier(
    samples,
    kind: str = "logistic",
    seed: int = 0,
    *,
    hidden: int = 16,
    iters: int = 600,
    lr: float = 0.5,
) -> ClassifierModel:
    """Fit on a shuffled 80% split, report accuracy on the held-out 20%.

    Raises DegenerateDataError for fewer than two samples or a single class.
    """
    if kind not in ("logistic", "small-mlp"):
        raise ValueError(f"unknown classifier kind {kind!r}")
    if len(samples) < 2:
        raise DegenerateDataError("need at least 2 samples")
    x, y = _extract(samples)
    if len(np.unique(y)) < 2:
        raise DegenerateDataError("training data has a single class")

    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(x))
    n_held = max(1, round(0.2 * len(x)))
    held, train = perm[:n_held], perm[n_held:]
    xt, yt = x[train], y[train]
    if len(xt) == 0:  # pathological tiny sets: train on everything
        xt, yt = x, y

    mu = xt.mean(axis=0)
    sigma = xt.std(axis=0)
    sigma = np.where(sigma < 1e-12, 1.0, sigma)
    xn = (xt - mu) / sigma
    n = len(xn)

    if kind == "logistic":
        w = np.zeros(x.shape[1])
        b = 0.0
        for _ in range(iters):
            p = _sigmoid(xn @ w + b)
            err = p - yt
            w -= lr * (xn.T @ err) / n
            b -= lr * float(err.mean())
        model: ClassifierModel = LogisticModel(w=w, b=b, mu=mu, sigma=sigma)
    else:
        d = x.shape[1]
        w1 = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, hidden))
        b1 = np.zeros(hidden)
        w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=hidden)
        b2 = 0.0
        for _ in range(iters):
            h = np.tanh(xn @ w1 + b1)
            p = _sigmoid(h @ w2 + b2)
            err = (p - yt) / n
            gw2 = h.T @ err
            gb2 = float(err.sum())
            gh = np.outer(err, w2) * (1.0 - h * h)
            gw1 = xn.T @ gh
            gb1 = gh.sum(axis=0)
            w2 -= lr * gw2
            b2 -= lr * gb2
            w1 -= lr * gw1
            b1 -= lr * gb1
        model = MlpModel(w1=w1, b1=b1, w2=w2, b2=b2, mu=mu, sigma=sigma)

    xh, yh = x[held], y[held]
    model.heldout_accuracy = 100.0 * float(
        (model.predict(xh) == yh.astype(np.int64)).mean()
    )
    return model


def finetune_classifier(model: ClassifierModel, samples) -> ClassifierModel:
    """Gradient steps on the output head only, against buffered samples.

    Hidden parameters and normalization statistics are untouched, so the
    MLP's non-head bytes are identical before and after. Empty input is a
    no-op. Deterministic: full batch, fixed iteration count, no randomness.
    """
    if not samples:
        return model
    x, y = _extract(samples)
    iters, lr = 200, 0.5
    if isinstance(model, LogisticModel):
        xn = (x - model.mu) / model.sigma
        n = len(xn)
        for _ in range(iters):
            p = _sigmoid(xn @ model.w + model.b)
            err = p - y
            model.w -= lr * (xn.T @ err) / n
            model.b -= lr * float(err.mean())
        return model
    h = model._hidden(x)
    n = len(h)
    for _ in range(iters):
        p = _sigmoid(h @ model.w2 + model.b2)
        err = p - y
        model.w2 -= lr * (h.T @ err) / n
        model.b2 -= lr * float(err.mean())
    return model


def save_model(model: ClassifierModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), sort_keys=True) + "\n")


def load_model(path: str | Path) -> ClassifierModel:
    d = json.loads(Path(path).read_text())
    if d["kind"] == "logistic":
        return LogisticModel(
            w=np.array(d["w"]),
            b=float(d["b"]),
            mu=np.array(d["mu"]),
            sigma=np.array(d["sigma"]),
            heldout_accuracy=float(d["heldout_accuracy"]),
        )
    if d["kind"] == "small-mlp":
        return MlpModel(
            w1=np.array(d["w1"]),
            b1=np.array(d["b1"]),
            w2=np.array(d["w2"]),
            b2=float(d["b2"]),
            mu=np.array(d["mu"]),
            sigma=np.array(d["sigma"]),
            heldout_accuracy=float(d["heldout_accuracy"]),
        )
    raise ValueError(f"unknown model kind {d['kind']!r}")
