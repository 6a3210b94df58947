"""Label-noise injection: random, margin-greedy adversarial, and group-targeted."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple, Union

import numpy as np

from .dataset import GROUPS, Dataset, GroupKey
from .metrics import accuracy
from .model import DimensionMismatch, LinearModel, fit, margins

log = logging.getLogger(__name__)

RANDOM = "random"
ADVERSARIAL = "adversarial"
GROUP_TARGETED = "group_targeted"
MODES = (RANDOM, ADVERSARIAL, GROUP_TARGETED)
# how adversarial flips are spread: top margins overall, or split evenly by class
GLOBAL = "global"
CLASS = "class"
BALANCES = (GLOBAL, CLASS)


@dataclass(frozen=True)
class NoiseSpec:
    rate: float
    mode: str = ADVERSARIAL
    target_group: Union[GroupKey, str, None] = "auto"
    seed: int = 0
    balance: str = GLOBAL

    def __post_init__(self) -> None:
        if self.balance not in BALANCES:
            raise ValueError(f"balance must be one of {BALANCES}")
        if not 0.0 <= self.rate <= 0.5:
            raise ValueError(f"noise rate must lie in [0, 0.5], got {self.rate}")
        if self.mode not in MODES:
            raise ValueError(f"noise mode must be one of {MODES}")
        tg = self.target_group
        if isinstance(tg, str) and tg != "auto":
            object.__setattr__(self, "target_group", GroupKey.parse(tg))
        elif isinstance(tg, tuple):
            object.__setattr__(self, "target_group", GroupKey(*tg))

    def count(self, n: int) -> int:
        return int(math.floor(self.rate * n + 1e-9))


@dataclass
class FlipOutcome:
    data: Dataset
    flipped_ids: np.ndarray
    chosen_group: Optional[GroupKey] = None
    candidate_accuracy: dict = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)


def flip_positions(d: Dataset, positions: np.ndarray) -> Dataset:
    labels = d.labels.copy()
    labels[positions] = 1 - labels[positions]
    return d.with_labels(labels)


def flip_ids(d: Dataset, ids) -> Dataset:
    """Negate the labels of the samples whose ``ids`` are given."""
    return flip_positions(d, np.flatnonzero(np.isin(d.ids, np.asarray(ids))))


def _check_probe(d: Dataset, probe: LinearModel) -> None:
    if probe.m != d.m:
        raise DimensionMismatch(f"probe has {probe.m} weights, data has {d.m} features")


def _largest_margin(d: Dataset, probe: LinearModel, pool: np.ndarray, k: int) -> np.ndarray:
    """The k pool positions with the largest correct-class margin; ties by ascending id."""
    marg = margins(probe, d)[pool]
    order = np.lexsort((d.ids[pool], -marg))
    return pool[order[:k]]


def flip_random(d: Dataset, spec: NoiseSpec) -> FlipOutcome:
    k = spec.count(d.n)
    pos = np.random.default_rng(spec.seed).choice(d.n, size=k, replace=False)
    return FlipOutcome(flip_positions(d, pos), np.sort(d.ids[pos]))


def _class_balanced(d: Dataset, probe: LinearModel, k: int) -> np.ndarray:
    """k // 2 largest-margin flips per class; an odd remainder goes to the best unused sample.

    Flipping only the global top margins tends to hit one class, which moves
    the intercept more than the decision direction.
    """
    half = k // 2
    pos = [_largest_margin(d, probe, np.flatnonzero(d.labels == y), half) for y in (0, 1)]
    if any(p.size < half for p in pos):
        raise ValueError(f"a class holds fewer than {half} samples")
    pos = np.concatenate(pos)
    if k % 2:
        rest = np.setdiff1d(np.arange(d.n), pos)
        pos = np.concatenate([pos, _largest_margin(d, probe, rest, 1)])
    return pos


def flip_adversarial(d: Dataset, spec: NoiseSpec, probe: LinearModel) -> FlipOutcome:
    _check_probe(d, probe)
    k = spec.count(d.n)
    if spec.balance == CLASS:
        pos = _class_balanced(d, probe, k)
    else:
        pos = _largest_margin(d, probe, np.arange(d.n), k)
    return FlipOutcome(flip_positions(d, pos), np.sort(d.ids[pos]))


def _flip_in_group(d: Dataset, probe: LinearModel, g: GroupKey, k: int) -> Tuple[np.ndarray, List[str]]:
    pool = np.flatnonzero((d.labels == g.y) & (d.sensitive == g.z))
    warnings = []
    if k > pool.size:
        warnings.append(f"group {g.tag} holds {pool.size} samples, fewer than the {k} requested flips; flipping all")
        log.warning(warnings[-1])
    return _largest_margin(d, probe, pool, min(k, pool.size)), warnings


def default_refit(d: Dataset) -> LinearModel:
    return fit(d, epochs=100, batch_size=100, learning_rate=0.05, seed=0)


def flip_group_targeted(
    d: Dataset,
    spec: NoiseSpec,
    probe: LinearModel,
    eval_data: Optional[Dataset] = None,
    refit: Callable[[Dataset], LinearModel] = default_refit,
) -> FlipOutcome:
    """Flip labels inside a single (y, z) group.

    With ``target_group="auto"`` each group is attacked in turn, a fresh
    model is fit on the corrupted data and scored on ``eval_data``; the
    group giving the lowest accuracy is kept.
    """
    _check_probe(d, probe)
    k = spec.count(d.n)
    target = spec.target_group
    scores = {}
    if target == "auto" or target is None:
        if eval_data is None:
            raise ValueError("auto group targeting needs eval_data to score candidate attacks")
        best = None
        for g in GROUPS:
            pos, _ = _flip_in_group(d, probe, g, k)
            if pos.size == 0:
                continue
            scores[g] = accuracy(refit(flip_positions(d, pos)), eval_data)
            if best is None or scores[g] < scores[best]:
                best = g
        if best is None:
            raise ValueError("every group is empty")
        target = best
    pos, warnings = _flip_in_group(d, probe, target, k)
    if pos.size == 0 and k > 0:
        raise ValueError(f"target group {target.tag} is empty")
    return FlipOutcome(flip_positions(d, pos), np.sort(d.ids[pos]), target, scores, warnings)


def corrupt(
    d: Dataset,
    spec: NoiseSpec,
    probe: Optional[LinearModel] = None,
    eval_data: Optional[Dataset] = None,
) -> FlipOutcome:
    """Dispatch on ``spec.mode``; fits a probe on ``d`` when one is needed and missing."""
    if spec.mode == RANDOM:
        return flip_random(d, spec)
    if probe is None:
        probe = default_refit(d)
    if spec.mode == ADVERSARIAL:
        return flip_adversarial(d, spec, probe)
    return flip_group_targeted(d, spec, probe, eval_data)
