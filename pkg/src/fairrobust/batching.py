"""Minibatches drawn per group in proportion to lambda_(y,z) * |S_y|."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Mapping, Optional

import numpy as np

from .dataset import GROUPS, GroupKey
from .selection import SelectionResult, _lambda_map


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int
    targets: Dict[GroupKey, float]
    counts: Dict[GroupKey, int]


def target_fractions(selection: SelectionResult, lambdas) -> Dict[GroupKey, float]:
    """Per-group share of a batch, lambda_(y,z)|S_y| / |S|, with empty groups'
    mass moved proportionally onto the nonempty ones."""
    if selection.budget_used == 0:
        raise ValueError("empty selection")
    lam = _lambda_map(lambdas)
    total = selection.budget_used
    raw = {g: lam[g] * selection.class_counts[g.y] / total for g in GROUPS}
    live = [g for g in GROUPS if selection.group_counts[g] > 0]
    mass = sum(raw[g] for g in live)
    if mass <= 0:
        # every live group has a zero cap; fall back to selection proportions
        return {g: selection.group_counts[g] / total for g in GROUPS}
    return {g: (raw[g] / mass if g in live else 0.0) for g in GROUPS}


def stratified_fractions(selection: SelectionResult) -> Dict[GroupKey, float]:
    if selection.budget_used == 0:
        raise ValueError("empty selection")
    return {g: selection.group_counts[g] / selection.budget_used for g in GROUPS}


def _largest_remainder(targets: Mapping[GroupKey, float], b: int) -> Dict[GroupKey, int]:
    floors = {g: int(math.floor(targets[g] + 1e-12)) for g in GROUPS}
    short = b - sum(floors.values())
    order = sorted(GROUPS, key=lambda g: (-(targets[g] - floors[g]), GROUPS.index(g)))
    for g in order[:short]:
        floors[g] += 1
    return floors


def _randomized_rounding(targets: Mapping[GroupKey, float], b: int, rng: np.random.Generator) -> Dict[GroupKey, int]:
    """Systematic rounding: sums to b and E[count] equals the fractional target."""
    floors = {g: int(math.floor(targets[g] + 1e-12)) for g in GROUPS}
    fracs = np.array([max(targets[g] - floors[g], 0.0) for g in GROUPS])
    short = b - sum(floors.values())
    if short > 0:
        fracs *= short / fracs.sum()
        edges = np.concatenate(([0.0], np.cumsum(fracs)))
        points = rng.random() + np.arange(short)
        slot = np.clip(np.searchsorted(edges, points, side="right") - 1, 0, len(GROUPS) - 1)
        extra = np.bincount(slot, minlength=len(GROUPS))
        for g, e in zip(GROUPS, extra):
            floors[g] += int(e)
    return floors


def plan_batch(
    selection: SelectionResult,
    lambdas,
    b: int,
    rng: Optional[np.random.Generator] = None,
    fractions: Optional[Mapping[GroupKey, float]] = None,
) -> BatchPlan:
    """Integer per-group draw counts summing to ``b``.

    Without ``rng`` fractional targets are rounded by largest remainder;
    with ``rng`` they are rounded at random so the expected counts are
    exact. ``fractions`` overrides the lambda-derived shares.
    """
    if b < 4:
        raise ValueError("batch size must be at least 4")
    shares = fractions if fractions is not None else target_fractions(selection, lambdas)
    targets = {g: b * shares[g] for g in GROUPS}
    counts = _largest_remainder(targets, b) if rng is None else _randomized_rounding(targets, b, rng)
    return BatchPlan(b, targets, counts)


def draw_batch(plan: BatchPlan, members: Mapping[GroupKey, np.ndarray], rng: np.random.Generator) -> np.ndarray:
    """Uniform with-replacement draws per group, concatenated and shuffled.

    ``members`` is ``SelectionResult.members(data)``.
    """
    parts = []
    for g in GROUPS:
        k = plan.counts[g]
        if k == 0:
            continue
        pool = members[g]
        if pool.size == 0:
            raise ValueError(f"plan draws {k} from empty group {g.tag}")
        parts.append(pool[rng.integers(0, pool.size, size=k)])
    batch = np.concatenate(parts)
    return batch[rng.permutation(batch.size)]


def batches_per_epoch(selection_size, b: int) -> int:
    if b < 1:
        raise ValueError("batch size must be positive")
    size = selection_size.budget_used if isinstance(selection_size, SelectionResult) else int(selection_size)
    return math.ceil(size / b)
