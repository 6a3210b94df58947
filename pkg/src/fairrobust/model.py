"""Logistic regression: prediction, per-sample loss, gradients, SGD, checkpoints."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .dataset import Dataset

PROB_CLAMP = 1e-12


class DimensionMismatch(ValueError):
    pass


class TrainingAborted(RuntimeError):
    pass


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float = 0.0
    learning_rate: float = 0.0005

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        self.bias = float(self.bias)
        if not (np.all(np.isfinite(self.weights)) and np.isfinite(self.bias)):
            raise ValueError("model parameters must be finite")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")

    @classmethod
    def zeros(cls, m: int, learning_rate: float = 0.0005) -> "LinearModel":
        return cls(np.zeros(m), 0.0, learning_rate)

    @property
    def m(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "LinearModel":
        return replace(self, weights=self.weights.copy())


@dataclass(frozen=True)
class PenaltyConfig:
    mu: float = 0.0

    def __post_init__(self) -> None:
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")


def _features(model: LinearModel, x) -> np.ndarray:
    x = x.features if isinstance(x, Dataset) else np.asarray(x, dtype=np.float64)
    x = np.atleast_2d(x)
    if x.shape[1] != model.m:
        raise DimensionMismatch(f"model expects {model.m} features, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite feature values")
    return x


def logits(model: LinearModel, x) -> np.ndarray:
    return _features(model, x) @ model.weights + model.bias


def predict_proba(model: LinearModel, x) -> np.ndarray:
    return expit(logits(model, x))


def predict(model: LinearModel, x) -> np.ndarray:
    return (predict_proba(model, x) >= 0.5).astype(np.int64)


def margins(model: LinearModel, d: Dataset) -> np.ndarray:
    """Signed logit margin: positive when the sample is classified correctly."""
    return (2 * d.labels - 1) * logits(model, d)


def cross_entropy(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(y * np.log(p) + (1 - y) * np.log1p(-p))


def per_sample_loss(model: LinearModel, d: Dataset) -> np.ndarray:
    return cross_entropy(predict_proba(model, d), d.labels)


def gradient(
    model: LinearModel,
    d: Dataset,
    batch: Sequence[int],
    sample_weights: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, float]:
    """Gradient of the (weighted) mean cross-entropy over ``batch``.

    Weights are normalized by their sum, so scaling them changes nothing.
    """
    batch = np.asarray(batch, dtype=np.int64)
    if batch.size == 0:
        raise ValueError("empty batch")
    x = d.features[batch]
    resid = predict_proba(model, x) - d.labels[batch]
    if sample_weights is None:
        coef = resid / batch.size
    else:
        w = np.asarray(sample_weights, dtype=np.float64)
        if w.shape != batch.shape:
            raise ValueError("sample_weights must match the batch length")
        if np.any(w < 0):
            raise ValueError("negative sample weight")
        total = w.sum()
        if total <= 0:
            raise ValueError("sample weights sum to zero")
        coef = resid * w / total
    return x.T @ coef, float(coef.sum())


def covariance(z: np.ndarray, p: np.ndarray) -> float:
    return float(np.mean(z * p) - np.mean(z) * np.mean(p))


def penalty_loss(model: LinearModel, d: Dataset, batch: Sequence[int], config: PenaltyConfig) -> float:
    """Mean cross-entropy plus mu * |Cov(z, predicted probability)| over the batch."""
    batch = np.asarray(batch, dtype=np.int64)
    p = predict_proba(model, d.features[batch])
    base = float(np.mean(cross_entropy(p, d.labels[batch])))
    if config.mu == 0:
        return base
    return base + config.mu * abs(covariance(d.sensitive[batch].astype(float), p))


def penalty_gradient(
    model: LinearModel, d: Dataset, batch: Sequence[int], config: PenaltyConfig
) -> Tuple[np.ndarray, float]:
    batch = np.asarray(batch, dtype=np.int64)
    gw, gb = gradient(model, d, batch)
    if config.mu == 0:
        return gw, gb
    x = d.features[batch]
    z = d.sensitive[batch].astype(float)
    p = predict_proba(model, x)
    cov = covariance(z, p)
    if cov == 0:
        return gw, gb
    # d Cov / d theta = mean((z - mean z) * p(1-p) * [x, 1])
    coef = (z - z.mean()) * p * (1 - p) / batch.size
    s = np.sign(cov) * config.mu
    return gw + s * (x.T @ coef), gb + s * float(coef.sum())


def sgd_step(model: LinearModel, grad_w: np.ndarray, grad_b: float) -> LinearModel:
    grad_w = np.asarray(grad_w, dtype=np.float64)
    if not (np.all(np.isfinite(grad_w)) and np.isfinite(grad_b)):
        raise TrainingAborted(
            f"non-finite gradient: grad_w={grad_w.tolist()}, grad_b={grad_b}, "
            f"weights={model.weights.tolist()}, bias={model.bias}"
        )
    lr = model.learning_rate
    return LinearModel(model.weights - lr * grad_w, model.bias - lr * grad_b, lr)


def fit(
    d: Dataset,
    epochs: int = 200,
    batch_size: int = 100,
    learning_rate: float = 0.05,
    seed: int = 0,
    model: Optional[LinearModel] = None,
) -> LinearModel:
    """Plain shuffled minibatch SGD; used for probes and quick baselines."""
    rng = np.random.default_rng(seed)
    model = model.copy() if model is not None else LinearModel.zeros(d.m, learning_rate)
    for _ in range(epochs):
        order = rng.permutation(d.n)
        for start in range(0, d.n, batch_size):
            gw, gb = gradient(model, d, order[start:start + batch_size])
            model = sgd_step(model, gw, gb)
    return model


# ------------------------------------------------------------ checkpoints
#
# Binary layout (little-endian): b"FRLR" magic, uint32 m, float64 bias,
# float64 learning_rate, then m float64 weights.
# JSON layout: {"m": int, "bias": float, "learning_rate": float, "weights": [...]}
# with shortest round-trip float repr.

_MAGIC = b"FRLR"
_HEADER = struct.Struct("<4sIdd")


def to_bytes(model: LinearModel) -> bytes:
    return _HEADER.pack(_MAGIC, model.m, model.bias, model.learning_rate) + model.weights.astype("<f8").tobytes()


def from_bytes(blob: bytes) -> LinearModel:
    magic, m, bias, lr = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise ValueError("not a model checkpoint")
    body = blob[_HEADER.size:]
    if len(body) != 8 * m:
        raise ValueError(f"checkpoint declares m={m} but carries {len(body) // 8} weights")
    return LinearModel(np.frombuffer(body, dtype="<f8").astype(np.float64), bias, lr)


def to_json(model: LinearModel) -> str:
    return json.dumps(
        {"m": model.m, "bias": model.bias, "learning_rate": model.learning_rate,
         "weights": [float(w) for w in model.weights]}
    )


def from_json(text: str) -> LinearModel:
    raw = json.loads(text)
    if len(raw["weights"]) != raw["m"]:
        raise ValueError("checkpoint weight count does not match m")
    return LinearModel(np.array(raw["weights"], dtype=np.float64), raw["bias"], raw["learning_rate"])


def save_checkpoint(model: LinearModel, path) -> None:
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(to_json(model))
    else:
        path.write_bytes(to_bytes(model))


def load_checkpoint(path) -> LinearModel:
    path = Path(path)
    if path.suffix == ".json":
        return from_json(path.read_text())
    return from_bytes(path.read_bytes())
