"""Clean-and-fair sample selection as a multidimensional knapsack.

Two constraint systems appear here:

* ``"original"``: budget ``|S| <= floor(tau*n)`` and the per-group caps
  ``|S_(y,z)| <= lambda_(y,z) * |S_y|``.
* ``"knapsack"``: budget plus ``sum_i w_i p_i <= tau*n`` per group, with
  ``w_i`` in {1, 1-lambda, 2-lambda}. This is what the greedy pass checks.

The knapsack system contains the original one and coincides with it only
on selections that use the whole budget ``tau*n``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from .dataset import GROUPS, Dataset, GroupKey

TOL = 1e-9
ORIGINAL = "original"
KNAPSACK = "knapsack"


def _lambda_map(lambdas) -> Dict[GroupKey, float]:
    raw = lambdas if isinstance(lambdas, Mapping) else lambdas.values
    return {GroupKey(*g): float(raw[g]) for g in GROUPS}


@dataclass
class SelectionProblem:
    losses: np.ndarray
    labels: np.ndarray
    sensitive: np.ndarray
    tau: float
    lambdas: Dict[GroupKey, float]

    def __post_init__(self) -> None:
        self.losses = np.asarray(self.losses, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.sensitive = np.asarray(self.sensitive, dtype=np.int64)
        self.lambdas = _lambda_map(self.lambdas)
        n = self.losses.shape[0]
        if self.labels.shape != (n,) or self.sensitive.shape != (n,):
            raise ValueError("losses, labels and sensitive must have equal length")
        if not np.all(np.isfinite(self.losses)):
            raise ValueError("losses must be finite")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.tau * n < 1 - TOL:
            raise ValueError("tau * n must be at least 1")

    @classmethod
    def from_dataset(cls, d: Dataset, losses: np.ndarray, tau: float, lambdas) -> "SelectionProblem":
        return cls(losses, d.labels, d.sensitive, tau, lambdas)

    @property
    def n(self) -> int:
        return self.losses.shape[0]

    @property
    def capacity(self) -> float:
        return self.tau * self.n

    @property
    def budget(self) -> int:
        # float guard: 0.9 * 2000 must floor to 1800
        return int(math.floor(self.tau * self.n + TOL))

    def group_codes(self) -> np.ndarray:
        return 2 * self.labels + self.sensitive


@dataclass
class SelectionResult:
    selected: np.ndarray
    group_counts: Dict[GroupKey, int]
    class_counts: Dict[int, int]
    budget_used: int

    @classmethod
    def from_indices(cls, idx, problem: SelectionProblem) -> "SelectionResult":
        idx = np.unique(np.asarray(idx, dtype=np.int64))
        codes = problem.group_codes()[idx]
        counts = np.bincount(codes, minlength=4)
        group_counts = {g: int(counts[2 * g.y + g.z]) for g in GROUPS}
        class_counts = {y: group_counts[GroupKey(y, 0)] + group_counts[GroupKey(y, 1)] for y in (0, 1)}
        return cls(idx, group_counts, class_counts, int(idx.size))

    def __len__(self) -> int:
        return self.budget_used

    def members(self, problem_or_data) -> Dict[GroupKey, np.ndarray]:
        """Selected indices split by group."""
        codes = 2 * problem_or_data.labels[self.selected] + problem_or_data.sensitive[self.selected]
        return {g: self.selected[codes == 2 * g.y + g.z] for g in GROUPS}


@dataclass
class KnapsackInstance:
    profits: np.ndarray
    constraint_weights: Dict[GroupKey, np.ndarray]
    capacities: Dict[object, float] = field(default_factory=dict)


def to_knapsack(problem: SelectionProblem) -> KnapsackInstance:
    profits = problem.losses.max() - problem.losses
    weights = {}
    for g in GROUPS:
        lam = problem.lambdas[g]
        w = np.ones(problem.n)
        in_class = problem.labels == g.y
        w[in_class & (problem.sensitive != g.z)] = 1.0 - lam
        w[in_class & (problem.sensitive == g.z)] = 2.0 - lam
        weights[g] = w
    capacities = {"cardinality": problem.capacity}
    capacities.update({g: problem.capacity for g in GROUPS})
    return KnapsackInstance(profits, weights, capacities)


def greedy_select(problem: SelectionProblem, system: str = KNAPSACK) -> SelectionResult:
    """Single pass over samples by descending profit (ties: ascending index).

    A sample is kept iff, counting it, the budget and every constraint of
    ``system`` still hold. Under ``"original"`` the two caps of a class
    force exact lambda proportions, so a running check admits nothing from
    a class whose caps lie strictly inside (0, 1).
    """
    if system not in (ORIGINAL, KNAPSACK):
        raise ValueError(f"unknown constraint system {system!r}")
    ks = to_knapsack(problem)
    order = np.lexsort((np.arange(problem.n), -ks.profits))
    budget = problem.budget
    codes = problem.group_codes()
    lam = problem.lambdas
    chosen: List[int] = []
    if system == ORIGINAL:
        counts = [0, 0, 0, 0]
        caps = [lam[g] for g in GROUPS]
        for i in order.tolist():
            if len(chosen) >= budget:
                break
            c = codes[i]
            counts[c] += 1
            y0 = 2 * (c // 2)
            size = counts[y0] + counts[y0 + 1]
            if counts[y0] <= caps[y0] * size + TOL and counts[y0 + 1] <= caps[y0 + 1] * size + TOL:
                chosen.append(i)
            else:
                counts[c] -= 1
        return SelectionResult.from_indices(chosen, problem)
    cap = problem.capacity + TOL
    # weight of a sample of group code c in the constraint of group g
    wtab = [[1.0 if c // 2 != g.y else (2.0 - lam[g] if c % 2 == g.z else 1.0 - lam[g]) for g in GROUPS]
            for c in range(4)]
    loads = [0.0, 0.0, 0.0, 0.0]
    for i in order.tolist():
        if len(chosen) >= budget:
            break
        w = wtab[codes[i]]
        if (loads[0] + w[0] <= cap and loads[1] + w[1] <= cap
                and loads[2] + w[2] <= cap and loads[3] + w[3] <= cap):
            for k in range(4):
                loads[k] += w[k]
            chosen.append(i)
    return SelectionResult.from_indices(chosen, problem)


def trimmed_select(problem: SelectionProblem) -> SelectionResult:
    """Lowest-loss floor(tau*n) samples, ties by ascending index."""
    order = np.lexsort((np.arange(problem.n), problem.losses))
    return SelectionResult.from_indices(order[: problem.budget], problem)


# ----------------------------------------------------------- feasibility

@dataclass
class Violation:
    constraint: str
    slack: float


@dataclass
class FeasibilityReport:
    feasible: bool
    violations: List[Violation]
    slacks: Dict[str, float]

    def __bool__(self) -> bool:
        return self.feasible


def constraint_slacks(
    group_counts: Mapping[GroupKey, float], problem: SelectionProblem, system: str = ORIGINAL
) -> Dict[str, float]:
    size = sum(group_counts.values())
    slacks = {"budget": problem.budget - size}
    for g in GROUPS:
        class_size = group_counts[GroupKey(g.y, 0)] + group_counts[GroupKey(g.y, 1)]
        excess = group_counts[g] - problem.lambdas[g] * class_size
        if system == ORIGINAL:
            slacks[g.tag] = -excess
        elif system == KNAPSACK:
            slacks[g.tag] = problem.capacity - (size + excess)
        else:
            raise ValueError(f"unknown constraint system {system!r}")
    return slacks


def check_feasible(result: SelectionResult, problem: SelectionProblem, system: str = ORIGINAL) -> FeasibilityReport:
    if result.selected.size and (result.selected.min() < 0 or result.selected.max() >= problem.n):
        raise IndexError("selection indices out of range")
    counts = SelectionResult.from_indices(result.selected, problem).group_counts
    slacks = constraint_slacks(counts, problem, system)
    violations = [Violation(k, s) for k, s in slacks.items() if s < -TOL]
    return FeasibilityReport(not violations, violations, slacks)


def feasible_mask(masks: np.ndarray, problem: SelectionProblem, system: str = ORIGINAL) -> np.ndarray:
    """Vectorized feasibility of many 0/1 selection vectors (rows of ``masks``)."""
    masks = np.asarray(masks, dtype=np.float64)
    codes = problem.group_codes()
    counts = {g: masks[:, codes == 2 * g.y + g.z].sum(axis=1) for g in GROUPS}
    slacks = constraint_slacks(counts, problem, system)
    ok = np.ones(masks.shape[0], dtype=bool)
    for s in slacks.values():
        ok &= s >= -TOL
    return ok


def knapsack_feasible_mask(masks: np.ndarray, ks: KnapsackInstance) -> np.ndarray:
    """Feasibility straight from the knapsack weights and capacities."""
    masks = np.asarray(masks, dtype=np.float64)
    ok = masks.sum(axis=1) <= ks.capacities["cardinality"] + TOL
    for g in GROUPS:
        ok &= masks @ ks.constraint_weights[g] <= ks.capacities[g] + TOL
    return ok


def all_masks(n: int) -> np.ndarray:
    codes = np.arange(2 ** n, dtype=np.int64)
    return ((codes[:, None] >> np.arange(n)) & 1).astype(np.int8)


def exact_select(problem: SelectionProblem, n_cap: int = 16, system: str = ORIGINAL) -> SelectionResult:
    """Exhaustive search over all 2^n subsets; test oracle only.

    Maximizes total profit (max loss minus loss), i.e. minimizes
    ``sum(loss) - max(loss)*|S|``; ties go to the larger selection, then to
    the lexicographically smallest index list.
    """
    n = problem.n
    if n > n_cap:
        raise ValueError(f"exact_select enumerates 2^n subsets; n={n} exceeds cap {n_cap}")
    masks = all_masks(n)
    ok = feasible_mask(masks, problem, system)
    profits = masks @ (problem.losses.max() - problem.losses)
    sizes = masks.sum(axis=1)
    cand = np.flatnonzero(ok)
    best = profits[cand].max()
    cand = cand[profits[cand] >= best - 1e-12]
    cand = cand[sizes[cand] == sizes[cand].max()]
    chosen = min(cand, key=lambda c: tuple(np.flatnonzero(masks[c])))
    return SelectionResult.from_indices(np.flatnonzero(masks[chosen]), problem)


def selected_loss(result: SelectionResult, problem: SelectionProblem) -> float:
    return float(problem.losses[result.selected].sum())


def selected_profit(result: SelectionResult, problem: SelectionProblem) -> float:
    return float((problem.losses.max() - problem.losses[result.selected]).sum())


def dump(problem: SelectionProblem, result: Optional[SelectionResult] = None) -> str:
    """JSON text of a problem (and optional result) for failure triage."""
    payload = {
        "tau": problem.tau,
        "lambdas": {g.tag: problem.lambdas[g] for g in GROUPS},
        "losses": problem.losses.tolist(),
        "labels": problem.labels.tolist(),
        "sensitive": problem.sensitive.tolist(),
    }
    if result is not None:
        payload["result"] = {
            "selected": result.selected.tolist(),
            "group_counts": {g.tag: c for g, c in result.group_counts.items()},
            "budget_used": result.budget_used,
            "original": check_feasible(result, problem).slacks,
            "knapsack": check_feasible(result, problem, KNAPSACK).slacks,
        }
    return json.dumps(payload, indent=1)


def load_dump(text: str) -> Tuple[SelectionProblem, Optional[np.ndarray]]:
    raw = json.loads(text)
    lambdas = {GroupKey.parse(k): v for k, v in raw["lambdas"].items()}
    problem = SelectionProblem(raw["losses"], raw["labels"], raw["sensitive"], raw["tau"], lambdas)
    sel = raw.get("result", {}).get("selected")
    return problem, None if sel is None else np.asarray(sel, dtype=np.int64)
