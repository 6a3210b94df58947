"""Accuracy and group-fairness disparities on a held-out set."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from .dataset import GROUPS, Dataset, GroupKey
from .model import LinearModel, predict


class EmptyStratum(ValueError):
    pass


@dataclass
class EvalReport:
    accuracy: float
    eo_disparity: float
    dp_disparity: float
    confusion: Dict[GroupKey, Dict[str, int]]

    def row(self) -> Dict[str, float]:
        return {"accuracy": self.accuracy, "eo_disparity": self.eo_disparity, "dp_disparity": self.dp_disparity}


def _check(d: Dataset) -> None:
    if d is None or d.n == 0:
        raise EmptyStratum("empty dataset")


def accuracy_from_predictions(yhat: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        raise EmptyStratum("empty dataset")
    return float(np.mean(yhat == y))


def eo_from_predictions(yhat: np.ndarray, y: np.ndarray, z: np.ndarray) -> float:
    gap = 0.0
    for label in (0, 1):
        in_y = y == label
        if not in_y.any():
            raise EmptyStratum(f"no samples with y={label}")
        base = yhat[in_y].mean()
        for s in (0, 1):
            cell = in_y & (z == s)
            if not cell.any():
                raise EmptyStratum(f"no samples with y={label}, z={s}")
            gap = max(gap, abs(yhat[cell].mean() - base))
    return float(gap)


def dp_from_predictions(yhat: np.ndarray, z: np.ndarray) -> float:
    base = yhat.mean()
    gap = 0.0
    for s in (0, 1):
        cell = z == s
        if not cell.any():
            raise EmptyStratum(f"no samples with z={s}")
        gap = max(gap, abs(yhat[cell].mean() - base))
    return float(gap)


def confusion_counts(yhat: np.ndarray, y: np.ndarray, z: np.ndarray) -> Dict[GroupKey, Dict[str, int]]:
    out = {}
    for g in GROUPS:
        cell = (y == g.y) & (z == g.z)
        pos = int(np.sum(yhat[cell] == 1))
        neg = int(cell.sum()) - pos
        if g.y == 1:
            out[g] = {"tp": pos, "fn": neg, "fp": 0, "tn": 0}
        else:
            out[g] = {"tp": 0, "fn": 0, "fp": pos, "tn": neg}
    return out


def accuracy(model: LinearModel, d: Dataset) -> float:
    _check(d)
    return accuracy_from_predictions(predict(model, d), d.labels)


def eo_disparity(model: LinearModel, d: Dataset) -> float:
    _check(d)
    return eo_from_predictions(predict(model, d), d.labels, d.sensitive)


def dp_disparity(model: LinearModel, d: Dataset) -> float:
    _check(d)
    return dp_from_predictions(predict(model, d), d.sensitive)


def evaluate(model: LinearModel, d: Dataset) -> EvalReport:
    _check(d)
    yhat = predict(model, d)
    return EvalReport(
        accuracy_from_predictions(yhat, d.labels),
        eo_from_predictions(yhat, d.labels, d.sensitive),
        dp_from_predictions(yhat, d.sensitive),
        confusion_counts(yhat, d.labels, d.sensitive),
    )
