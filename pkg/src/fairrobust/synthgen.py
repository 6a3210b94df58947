"""Two-Gaussian synthetic data with a rotation-biased sensitive attribute."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset

POS_MEAN = np.array([1.0, 1.0])
POS_COV = np.array([[5.0, 1.0], [1.0, 5.0]])
NEG_MEAN = np.array([-1.0, -1.0])
NEG_COV = np.array([[10.0, 1.0], [1.0, 3.0]])


@dataclass(frozen=True)
class SynthSpec:
    n_total: int = 3200
    seed: int = 0
    class_balance: float = 0.5
    bias_factor: float = 7.0
    rotation: float = math.pi / 5

    def __post_init__(self) -> None:
        if self.n_total < 4:
            raise ValueError("n_total must be >= 4")
        if not 0.0 < self.class_balance < 1.0:
            raise ValueError("class_balance must lie in (0, 1)")
        if not self.bias_factor > 0:
            raise ValueError("bias_factor must be positive")


def log_density(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Log pdf of a bivariate normal evaluated row-wise on ``x`` (n x 2)."""
    chol = np.linalg.cholesky(cov)
    diff = np.atleast_2d(x) - mean
    sol = np.linalg.solve(chol, diff.T)
    maha = np.sum(sol * sol, axis=0)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * maha - 0.5 * log_det - math.log(2.0 * math.pi)


def density(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    return np.exp(log_density(x, mean, cov))


def rotate(x: np.ndarray, phi: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    return np.column_stack((x[:, 0] * c - x[:, 1] * s, x[:, 0] * s + x[:, 1] * c))


def sensitive_probability(x: np.ndarray, bias_factor: float, rotation: float) -> np.ndarray:
    """Pr(z=1) = b*p1' / (b*p1' + p0') at the rotated point, computed in log space."""
    xr = rotate(x, rotation)
    logit = math.log(bias_factor) + log_density(xr, POS_MEAN, POS_COV) - log_density(xr, NEG_MEAN, NEG_COV)
    return 1.0 / (1.0 + np.exp(-np.clip(logit, -700, 700)))


def _sample_gaussian(rng: np.random.Generator, mean: np.ndarray, cov: np.ndarray, k: int) -> np.ndarray:
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ValueError(f"covariance is not positive definite: {cov.tolist()}") from None
    return mean + rng.standard_normal((k, 2)) @ chol.T


def generate(spec: SynthSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    n = spec.n_total
    y = (rng.random(n) < spec.class_balance).astype(np.int64)
    x = np.empty((n, 2))
    pos = y == 1
    x[pos] = _sample_gaussian(rng, POS_MEAN, POS_COV, int(pos.sum()))
    x[~pos] = _sample_gaussian(rng, NEG_MEAN, NEG_COV, int((~pos).sum()))
    p_z = sensitive_probability(x, spec.bias_factor, spec.rotation)
    z = (rng.random(n) < p_z).astype(np.int64)
    return Dataset(x, y, z)
