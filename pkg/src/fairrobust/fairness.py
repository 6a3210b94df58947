"""Per-group sampling-ratio caps and their signed-gradient updates."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Optional

import numpy as np

from .dataset import GROUPS, Dataset, GroupKey, group_sizes
from .model import PROB_CLAMP, LinearModel, per_sample_loss, predict, predict_proba
from .selection import SelectionResult

EO = "EO"
DP = "DP"
METRICS = (EO, DP)

# DP objective terms: loss toward the positive label over the whole z group,
# or the true-label loss of the positives only (scaled by their share of z)
DP_ALL = "positive_target"
DP_POSITIVES = "positives_only"
DP_FORMS = (DP_ALL, DP_POSITIVES)


class EmptyGroup(ValueError):
    pass


@dataclass(frozen=True)
class LambdaState:
    values: Dict[GroupKey, float]
    step_size: float
    metric: str = EO

    def __post_init__(self) -> None:
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        if self.step_size < 0:
            raise ValueError("step_size must be nonnegative")

    def __getitem__(self, g) -> float:
        return self.values[GroupKey(*g)]

    def snapshot(self) -> Dict[str, float]:
        return {f"lambda_{g.y}{g.z}": self.values[g] for g in GROUPS}


def _pair(y: int, lam1: float) -> Dict[GroupKey, float]:
    lam1 = min(1.0, max(0.0, lam1))
    return {GroupKey(y, 1): lam1, GroupKey(y, 0): 1.0 - lam1}


def init_lambda(
    d: Dataset,
    metric: str = EO,
    step_size: float = 0.0005,
    mode: str = "proportional",
    seed: Optional[int] = None,
) -> LambdaState:
    sizes = group_sizes(d)
    empty = [g.tag for g, s in sizes.items() if s == 0]
    if empty:
        raise EmptyGroup(f"cannot initialize caps; empty groups: {empty}")
    values: Dict[GroupKey, float] = {}
    if mode == "proportional":
        for y in (0, 1):
            values.update(_pair(y, sizes[GroupKey(y, 1)] / (sizes[GroupKey(y, 0)] + sizes[GroupKey(y, 1)])))
    elif mode == "random":
        rng = np.random.default_rng(seed)
        for y in (0, 1):
            values.update(_pair(y, float(rng.random())))
    else:
        raise ValueError(f"unknown init mode {mode!r}")
    return LambdaState(values, step_size, metric)


@dataclass
class GroupLossReport:
    losses: Dict[GroupKey, Optional[float]]
    positive_rates: Dict[GroupKey, Optional[float]]
    sizes: Dict[GroupKey, int]
    # mean loss each group would incur if every label were 1
    positive_target_losses: Dict[GroupKey, Optional[float]] = field(default_factory=dict)

    @property
    def empty(self):
        return [g for g in GROUPS if self.sizes[g] == 0]


def group_report(
    model: LinearModel,
    selection: SelectionResult,
    d: Dataset,
    losses: Optional[np.ndarray] = None,
) -> GroupLossReport:
    """Mean loss and positive-prediction rate per group over the selected samples."""
    if losses is None:
        losses = per_sample_loss(model, d)
    members = selection.members(d)
    p = predict_proba(model, d.features)
    yhat = (p >= 0.5).astype(np.int64)
    to_one = -np.log(np.clip(p, PROB_CLAMP, 1.0))
    out_l, out_p, out_t, sizes = {}, {}, {}, {}
    for g in GROUPS:
        idx = members[g]
        sizes[g] = int(idx.size)
        if idx.size:
            out_l[g] = float(losses[idx].mean())
            out_p[g] = float(yhat[idx].mean())
            out_t[g] = float(to_one[idx].mean())
        else:
            out_l[g] = out_p[g] = out_t[g] = None
    return GroupLossReport(out_l, out_p, sizes, out_t)


def _sign(x: float) -> float:
    return float(np.sign(x))


def update_eo(state: LambdaState, report: GroupLossReport) -> LambdaState:
    values = dict(state.values)
    for y in (0, 1):
        l0, l1 = report.losses[GroupKey(y, 0)], report.losses[GroupKey(y, 1)]
        if l0 is None or l1 is None:
            continue
        values.update(_pair(y, values[GroupKey(y, 1)] - state.step_size * _sign(l0 - l1)))
    return replace(state, values=values)


def dp_terms(report: GroupLossReport, form: str = DP_ALL) -> Optional[Dict[int, float]]:
    """Per-z objective terms, sum_y |S(y,z)|/|S(z)| * L(y,z); None if undefined.

    With ``DP_ALL`` every L is the loss toward label 1, so T_z is a smooth
    stand-in for how far group z is from being predicted positive. With
    ``DP_POSITIVES`` only the y=1 summand is kept, using true-label loss.
    """
    if form not in DP_FORMS:
        raise ValueError(f"dp form must be one of {DP_FORMS}")
    classes = (0, 1) if form == DP_ALL else (1,)
    source = report.positive_target_losses if form == DP_ALL else report.losses
    terms = {}
    for z in (0, 1):
        n_z = report.sizes[GroupKey(0, z)] + report.sizes[GroupKey(1, z)]
        if n_z == 0 or report.sizes[GroupKey(classes[-1], z)] == 0 and form == DP_POSITIVES:
            return None
        total = 0.0
        for y in classes:
            g = GroupKey(y, z)
            if report.sizes[g]:
                total += report.sizes[g] / n_z * source[g]
        terms[z] = total
    return terms


def update_dp(state: LambdaState, report: GroupLossReport, form: str = DP_ALL) -> LambdaState:
    """Shift both classes' caps toward the z group with the larger term.

    A larger T_1 means z=1 is further from positive predictions, so more
    (1,1) positives and fewer (0,1) negatives are sampled.
    """
    terms = dp_terms(report, form)
    if terms is None:
        return state
    step = state.step_size * _sign(terms[0] - terms[1])
    values = dict(state.values)
    values.update(_pair(1, values[GroupKey(1, 1)] - step))
    values.update(_pair(0, values[GroupKey(0, 1)] + step))
    return replace(state, values=values)


def update(state: LambdaState, report: GroupLossReport, dp_form: str = DP_ALL) -> LambdaState:
    return update_eo(state, report) if state.metric == EO else update_dp(state, report, dp_form)
