"""Self-checks against independent oracles: enumeration, finite differences, Monte Carlo."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

import numpy as np

from . import batching, selection
from .dataset import GROUPS, Dataset, GroupKey
from .model import LinearModel, gradient, per_sample_loss, sgd_step


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def random_lambdas(rng: np.random.Generator) -> Dict[GroupKey, float]:
    l11, l01 = rng.random(2)
    return {GroupKey(1, 1): l11, GroupKey(1, 0): 1 - l11, GroupKey(0, 1): l01, GroupKey(0, 0): 1 - l01}


def random_problem(rng: np.random.Generator, n_min: int, n_max: int) -> selection.SelectionProblem:
    n = int(rng.integers(n_min, n_max + 1))
    k = int(rng.integers(1, n + 1))
    tau = k / n if rng.random() < 0.5 else rng.uniform(k / n, 1.0)
    return selection.SelectionProblem(
        rng.exponential(size=n), rng.integers(0, 2, n), rng.integers(0, 2, n), min(tau, 1.0), random_lambdas(rng)
    )


def greedy_feasibility(instances: int = 1000, seed: int = 0, system: str = selection.KNAPSACK) -> Tuple[int, list]:
    """Count greedy outputs passing ``check_feasible``; returns (passes, first failing dumps)."""
    rng = np.random.default_rng(seed)
    passes, bad = 0, []
    for _ in range(instances):
        p = random_problem(rng, 1, 60)
        sel = selection.greedy_select(p)
        if selection.check_feasible(sel, p, system):
            passes += 1
        elif len(bad) < 3:
            bad.append(selection.dump(p, sel))
    return passes, bad


def formulation_agreement(instances: int = 200, seed: int = 0, full_capacity_only: bool = False) -> Tuple[int, list]:
    """Instances on which both constraint systems accept exactly the same subsets."""
    rng = np.random.default_rng(seed)
    agree, bad = 0, []
    for _ in range(instances):
        p = random_problem(rng, 1, 12)
        masks = selection.all_masks(p.n)
        if full_capacity_only:
            masks = masks[np.abs(masks.sum(axis=1) - p.capacity) < 1e-9]
        a = selection.feasible_mask(masks, p, selection.ORIGINAL)
        b = selection.knapsack_feasible_mask(masks, selection.to_knapsack(p)) & (masks.sum(axis=1) <= p.budget)
        if np.array_equal(a, b):
            agree += 1
        elif len(bad) < 3:
            i = int(np.flatnonzero(a != b)[0])
            bad.append((selection.dump(p), np.flatnonzero(masks[i]).tolist(), bool(a[i]), bool(b[i])))
    return agree, bad


def oracle_bound(instances: int = 500, n: int = 10, seed: int = 0) -> Tuple[int, int, float]:
    """(greedy never better, exact matches, worst gap) against exhaustive search.

    Both solvers see the same constraint system, the one greedy checks.
    """
    rng = np.random.default_rng(seed)
    bounded = matches = 0
    worst = 0.0
    for _ in range(instances):
        p = random_problem(rng, n, n)
        g = selection.selected_profit(selection.greedy_select(p), p)
        e = selection.selected_profit(selection.exact_select(p, system=selection.KNAPSACK), p)
        bounded += g <= e + 1e-9
        matches += abs(g - e) <= 1e-9
        worst = max(worst, e - g)
    return bounded, matches, worst


def finite_difference_error(instances: int = 100, seed: int = 0, h: float = 1e-5) -> float:
    """Max relative error of the analytic gradient vs central differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        n, m = int(rng.integers(2, 40)), int(rng.integers(1, 6))
        d = Dataset(rng.normal(size=(n, m)), rng.integers(0, 2, n), rng.integers(0, 2, n))
        model = LinearModel(rng.normal(size=m), float(rng.normal()))
        batch = rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)
        w = rng.uniform(0.1, 2.0, size=batch.size) if rng.random() < 0.5 else None
        gw, gb = gradient(model, d, batch, w)

        def f(mod):
            losses = per_sample_loss(mod, d.subset(batch))
            return losses.mean() if w is None else np.sum(w * losses) / np.sum(w)

        theta = np.append(model.weights, model.bias)
        for j, analytic in enumerate(np.append(gw, gb)):
            up, dn = theta.copy(), theta.copy()
            up[j] += h
            dn[j] -= h
            num = (f(LinearModel(up[:-1], up[-1])) - f(LinearModel(dn[:-1], dn[-1]))) / (2 * h)
            worst = max(worst, abs(analytic - num) / max(abs(num), 1e-6))
    return worst


def sampler_instance(seed: int = 0):
    """A fixed 40-sample selection with unequal groups and caps."""
    rng = np.random.default_rng(seed)
    y = np.array([0] * 18 + [1] * 22)
    z = np.array([0] * 11 + [1] * 7 + [0] * 5 + [1] * 17)
    d = Dataset(rng.normal(size=(40, 3)), y, z)
    lam = {GroupKey(0, 0): 0.45, GroupKey(0, 1): 0.55, GroupKey(1, 0): 0.4, GroupKey(1, 1): 0.6}
    problem = selection.SelectionProblem(np.zeros(40), y, z, 1.0, lam)
    sel = selection.SelectionResult.from_indices(np.arange(40), problem)
    model = LinearModel(np.array([0.4, -0.3, 0.2]), 0.1)
    return d, sel, lam, model


def sampler_check(batches: int = 10_000, b: int = 100, seed: int = 0) -> Tuple[float, float]:
    """(max abs frequency error, relative gradient error) of the lambda sampler."""
    d, sel, lam, model = sampler_instance()
    rng = np.random.default_rng(seed)
    members = sel.members(d)
    counts = dict.fromkeys(GROUPS, 0)
    grad_sum = np.zeros(d.m + 1)
    for _ in range(batches):
        plan = batching.plan_batch(sel, lam, b, rng=rng)
        batch = batching.draw_batch(plan, members, rng)
        for g in GROUPS:
            counts[g] += plan.counts[g]
        gw, gb = gradient(model, d, batch)
        grad_sum += np.append(gw, gb)
    size = sel.budget_used
    target = {g: lam[g] * sel.class_counts[g.y] / size for g in GROUPS}
    freq_err = max(abs(counts[g] / (batches * b) - target[g]) for g in GROUPS)
    # weighted ERM over the whole selection: cell weight lambda|S_y| / |S_(y,z)|
    w = np.array([lam[d.group_of(i)] * sel.class_counts[d.labels[i]] / sel.group_counts[d.group_of(i)]
                  for i in sel.selected])
    ew, eb = gradient(model, d, sel.selected, w)
    exact = np.append(ew, eb)
    rel = np.linalg.norm(grad_sum / batches - exact) / np.linalg.norm(exact)
    return freq_err, float(rel)


def stratified_lr(d: Dataset, epochs: int, b: int, learning_rate: float, seed: int) -> LinearModel:
    """LR on per-group proportional minibatches, written without the trainer."""
    rng = np.random.default_rng(seed)
    problem = selection.SelectionProblem(np.zeros(d.n), d.labels, d.sensitive, 1.0, {g: 0.5 for g in GROUPS})
    sel = selection.SelectionResult.from_indices(np.arange(d.n), problem)
    members = sel.members(d)
    shares = {g: sel.group_counts[g] / d.n for g in GROUPS}
    model = LinearModel.zeros(d.m, learning_rate)
    for _ in range(epochs):
        for _ in range(batching.batches_per_epoch(d.n, b)):
            plan = batching.plan_batch(sel, None, b, rng=rng, fractions=shares)
            batch = batching.draw_batch(plan, members, rng)
            model = sgd_step(model, *gradient(model, d, batch))
    return model


def degenerate_tau_gap(d: Dataset, epochs: int = 50, b: int = 100, learning_rate: float = 0.002,
                       seed: int = 1) -> float:
    """Max parameter difference between Ours at tau=1 with frozen proportional caps and stratified LR."""
    from .trainer import OURS, TrainConfig, train

    cfg = TrainConfig(method=OURS, tau=1.0, alpha=0.0, epochs=epochs, warm_start_epochs=0, batch_size=b,
                      learning_rate=learning_rate, seed=seed, lambda_init="proportional")
    ours, _ = train(cfg, d)
    ref = stratified_lr(d, epochs, b, learning_rate, seed)
    return float(max(np.max(np.abs(ours.weights - ref.weights)), abs(ours.bias - ref.bias)))


def run_all(quick: bool = False) -> List[Check]:
    scale = 5 if quick else 1
    out = []
    passes, _ = greedy_feasibility(1000 // scale)
    n = 1000 // scale
    out.append(Check("greedy feasibility (knapsack constraints)", passes == n, f"{passes}/{n} feasible"))
    agree, _ = formulation_agreement(200 // scale, full_capacity_only=True)
    n = 200 // scale
    out.append(Check("constraint systems agree at |S| = tau*n", agree == n, f"{agree}/{n} instances"))
    bounded, matches, worst = oracle_bound(500 // scale)
    n = 500 // scale
    out.append(Check("greedy never beats exact search", bounded == n,
                     f"{bounded}/{n} bounded, match rate {matches / n:.3f}, worst profit gap {worst:.3g}"))
    err = finite_difference_error(100 // scale)
    out.append(Check("gradient vs central differences", err < 1e-5, f"max relative error {err:.2e}"))
    freq, rel = sampler_check(10_000 // scale)
    tol = 0.01 if not quick else 0.02
    out.append(Check("sampler unbiasedness", freq <= 0.01 and rel <= tol,
                     f"max frequency error {freq:.4f}, gradient relative error {rel:.4f}"))
    from .synthgen import SynthSpec, generate

    gap = degenerate_tau_gap(generate(SynthSpec(n_total=400 if quick else 2000, seed=0)), epochs=10 if quick else 50)
    out.append(Check("tau=1 with frozen caps equals stratified LR", gap <= 1e-9, f"max parameter gap {gap:.2e}"))
    return out


SUITES: Dict[str, Callable[..., object]] = {
    "greedy_feasibility": greedy_feasibility,
    "formulation_agreement": formulation_agreement,
    "oracle_bound": oracle_bound,
    "finite_difference_error": finite_difference_error,
    "sampler_check": sampler_check,
    "degenerate_tau_gap": degenerate_tau_gap,
}
