"""Training loops: the fair-and-robust selection loop, its ablations, and baselines."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import batching, fairness, selection
from .dataset import GROUPS, Dataset
from .metrics import EvalReport, evaluate as _evaluate
from .model import (
    LinearModel,
    PenaltyConfig,
    TrainingAborted,
    gradient,
    penalty_gradient,
    per_sample_loss,
    sgd_step,
)

log = logging.getLogger(__name__)

LR = "LR"
ITLM = "ITLM"
FB = "FB"
ITLM_FB = "ITLM_then_FB"
ITLM_PENALTY = "ITLM_then_Penalty"
OURS = "Ours"
OURS_NO_CONSTRAINTS = "Ours_no_constraints"
OURS_NO_WEIGHTS = "Ours_no_weights"
METHODS = (LR, ITLM, FB, ITLM_FB, ITLM_PENALTY, OURS, OURS_NO_CONSTRAINTS, OURS_NO_WEIGHTS)

DISPLAY = {
    LR: "LR", ITLM: "ITLM", FB: "FB", ITLM_FB: "ITLM->FB", ITLM_PENALTY: "ITLM->Penalty",
    OURS: "Ours", OURS_NO_CONSTRAINTS: "W/o fairness const.", OURS_NO_WEIGHTS: "W/o ERM weights",
}


@dataclass(frozen=True)
class TrainConfig:
    method: str = OURS
    tau: float = 0.9
    alpha: float = 0.0005
    mu: float = 0.0
    epochs: int = 400
    warm_start_epochs: int = 100
    batch_size: int = 100
    learning_rate: float = 0.0005
    metric: str = fairness.EO
    seed: int = 0
    lambda_init: str = "proportional"
    phase2_epochs: Optional[int] = None
    dp_form: str = fairness.DP_ALL

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        metric = self.metric.upper()
        if metric not in fairness.METRICS:
            raise ValueError(f"metric must be EO or DP, got {self.metric!r}")
        object.__setattr__(self, "metric", metric)
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.epochs < 1 or self.warm_start_epochs < 0:
            raise ValueError("epochs must be positive and warm_start_epochs nonnegative")
        if self.warm_start_epochs > self.epochs:
            raise ValueError("warm_start_epochs cannot exceed epochs")
        if self.dp_form not in fairness.DP_FORMS:
            raise ValueError(f"dp_form must be one of {fairness.DP_FORMS}")
        if self.alpha < 0 or self.mu < 0 or self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError("alpha, mu must be >= 0; learning_rate and batch_size > 0")

    @property
    def fair_epochs(self) -> int:
        return self.epochs - self.warm_start_epochs


@dataclass
class RunLog:
    config: TrainConfig
    records: List[Dict[str, object]] = field(default_factory=list)
    final: Optional[EvalReport] = None
    phase1_selection: Optional[np.ndarray] = None

    def add(self, **record) -> None:
        record["epoch"] = len(self.records) + 1
        self.records.append(record)

    def columns(self) -> List[str]:
        cols: List[str] = []
        for r in self.records:
            cols.extend(k for k in r if k not in cols)
        return ["epoch"] + [c for c in cols if c != "epoch"]

    def to_csv(self, path) -> None:
        cols = self.columns()
        with Path(path).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
            w.writeheader()
            for r in self.records:
                w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in cols})

    def summary(self) -> Dict[str, object]:
        out: Dict[str, object] = {"method": self.config.method, "seed": self.config.seed, "metric": self.config.metric}
        if self.final is not None:
            out.update(self.final.row())
        return out


# ------------------------------------------------------------ epoch bodies

def _plain_epoch(model: LinearModel, d: Dataset, idx: np.ndarray, b: int, rng, grad_fn=None) -> LinearModel:
    order = idx[rng.permutation(idx.size)]
    for start in range(0, order.size, b):
        batch = order[start:start + b]
        gw, gb = gradient(model, d, batch) if grad_fn is None else grad_fn(model, d, batch)
        model = sgd_step(model, gw, gb)
    return model


def _sampled_epoch(
    model: LinearModel,
    d: Dataset,
    sel: selection.SelectionResult,
    state: fairness.LambdaState,
    b: int,
    rng,
    weighted: bool = True,
) -> LinearModel:
    """ceil(|S|/b) batches drawn per group; unit sample weights under the sampler."""
    members = sel.members(d)
    shares = batching.target_fractions(sel, state) if weighted else batching.stratified_fractions(sel)
    for _ in range(batching.batches_per_epoch(sel, b)):
        plan = batching.plan_batch(sel, state, b, rng=rng, fractions=shares)
        batch = batching.draw_batch(plan, members, rng)
        gw, gb = gradient(model, d, batch)
        model = sgd_step(model, gw, gb)
    return model


def _all_selected(d: Dataset) -> selection.SelectionResult:
    problem = selection.SelectionProblem(np.zeros(d.n), d.labels, d.sensitive, 1.0, _dummy_lambdas())
    return selection.SelectionResult.from_indices(np.arange(d.n), problem)


def _dummy_lambdas():
    return {g: 0.5 for g in GROUPS}


def _check_loss(losses: np.ndarray, epoch: int) -> None:
    if not np.all(np.isfinite(losses)):
        raise TrainingAborted(f"non-finite loss at epoch {epoch}")


class Trainer:
    """One deterministic training run of a :class:`TrainConfig`."""

    def __init__(self, config: TrainConfig, train: Dataset, validation: Optional[Dataset] = None):
        self.config = config
        self.train = train
        self.validation = validation
        self.rng = np.random.default_rng(config.seed)
        self.model = LinearModel.zeros(train.m, config.learning_rate)
        self.log = RunLog(config)
        self.state: Optional[fairness.LambdaState] = None
        self.all_idx = np.arange(train.n)

    # -- logging
    def _record(self, losses=None, sel=None, report=None, phase="") -> None:
        if losses is None:
            losses = per_sample_loss(self.model, self.train)
        _check_loss(losses, len(self.log.records) + 1)
        rec: Dict[str, object] = {"phase": phase, "train_loss": float(losses.mean())}
        rec["selection_size"] = self.train.n if sel is None else sel.budget_used
        lam = self.state.snapshot() if self.state is not None else {f"lambda_{g.y}{g.z}": None for g in GROUPS}
        rec.update(lam)
        for g in GROUPS:
            rec[f"L_{g.y}{g.z}"] = None if report is None else report.losses[g]
        if self.validation is not None:
            ev = _evaluate(self.model, self.validation)
            rec.update(val_accuracy=ev.accuracy, val_eo=ev.eo_disparity, val_dp=ev.dp_disparity)
        self.log.add(**rec)

    # -- building blocks
    def _problem(self, losses: np.ndarray) -> selection.SelectionProblem:
        lam = self.state if self.state is not None else _dummy_lambdas()
        return selection.SelectionProblem.from_dataset(self.train, losses, self.config.tau, lam)

    def _select(self, losses: np.ndarray, constrained: bool) -> selection.SelectionResult:
        problem = self._problem(losses)
        if constrained:
            sel = selection.greedy_select(problem)
            report = selection.check_feasible(sel, problem, selection.KNAPSACK)
            if not report.feasible:
                raise TrainingAborted(f"selection violates {report.violations}\n{selection.dump(problem, sel)}")
        else:
            sel = selection.trimmed_select(problem)
        if sel.budget_used == 0:
            raise TrainingAborted(f"empty selection\n{selection.dump(problem)}")
        return sel

    def _init_state(self, d: Dataset) -> fairness.LambdaState:
        return fairness.init_lambda(
            d, self.config.metric, self.config.alpha, self.config.lambda_init, self.config.seed
        )

    def warm_start(self) -> None:
        for _ in range(self.config.warm_start_epochs):
            self.model = _plain_epoch(self.model, self.train, self.all_idx, self.config.batch_size, self.rng)
            self._record(phase="warm")

    def run_plain(self, epochs: int) -> None:
        for _ in range(epochs):
            self.model = _plain_epoch(self.model, self.train, self.all_idx, self.config.batch_size, self.rng)
            self._record(phase="plain")

    def run_itlm(self, epochs: int) -> selection.SelectionResult:
        """Trimmed-loss epochs; returns the selection under the final model."""
        for _ in range(epochs):
            losses = per_sample_loss(self.model, self.train)
            _check_loss(losses, len(self.log.records) + 1)
            sel = self._select(losses, constrained=False)
            self.model = _plain_epoch(self.model, self.train, sel.selected, self.config.batch_size, self.rng)
            self._record(sel=sel, phase="itlm")
        return self._select(per_sample_loss(self.model, self.train), constrained=False)

    def run_fair(self, epochs: int, constrained: bool, weighted: bool, reselect: bool = True,
                 fixed: Optional[selection.SelectionResult] = None) -> None:
        """Per epoch: (re)select, sample batches per group, then update the caps."""
        base = self.train if fixed is None else self.train.subset(fixed.selected)
        if self.state is None:
            self.state = self._init_state(base)
        for _ in range(epochs):
            losses = per_sample_loss(self.model, self.train)
            _check_loss(losses, len(self.log.records) + 1)
            if fixed is not None:
                sel = fixed
            elif reselect:
                sel = self._select(losses, constrained)
            else:
                sel = _all_selected(self.train)
            self.model = _sampled_epoch(self.model, self.train, sel, self.state, self.config.batch_size,
                                        self.rng, weighted)
            losses = per_sample_loss(self.model, self.train)
            report = fairness.group_report(self.model, sel, self.train, losses)
            self._record(losses, sel, report, phase="fair")
            self.state = fairness.update(self.state, report, self.config.dp_form)

    def run_penalty(self, epochs: int, fixed: selection.SelectionResult) -> None:
        cfg = PenaltyConfig(self.config.mu)
        grad_fn = lambda m, d, batch: penalty_gradient(m, d, batch, cfg)
        for _ in range(epochs):
            self.model = _plain_epoch(self.model, self.train, fixed.selected, self.config.batch_size,
                                      self.rng, grad_fn)
            self._record(sel=fixed, phase="penalty")

    # -- entry point
    def fit(self) -> LinearModel:
        cfg = self.config
        method = cfg.method
        if method == LR:
            self.run_plain(cfg.epochs)
            return self.model
        self.warm_start()
        epochs = cfg.fair_epochs
        if method == ITLM:
            self.run_itlm(epochs)
        elif method == FB:
            self.run_fair(epochs, constrained=False, weighted=True, reselect=False)
        elif method == OURS:
            self.run_fair(epochs, constrained=True, weighted=True)
        elif method == OURS_NO_CONSTRAINTS:
            self.run_fair(epochs, constrained=False, weighted=True)
        elif method == OURS_NO_WEIGHTS:
            self.run_fair(epochs, constrained=True, weighted=False)
        else:
            frozen = self.run_itlm(epochs)
            self.log.phase1_selection = frozen.selected
            phase2 = cfg.phase2_epochs if cfg.phase2_epochs is not None else epochs
            if method == ITLM_FB:
                self.run_fair(phase2, constrained=False, weighted=True, fixed=frozen)
            else:
                self.run_penalty(phase2, frozen)
        return self.model


def train(
    config: TrainConfig,
    train: Dataset,
    test: Optional[Dataset] = None,
    validation: Optional[Dataset] = None,
) -> Tuple[LinearModel, RunLog]:
    trainer = Trainer(config, train, validation)
    model = trainer.fit()
    if test is not None:
        trainer.log.final = evaluate(model, test)
    return model, trainer.log


def evaluate(model: LinearModel, test: Dataset) -> EvalReport:
    return _evaluate(model, test)


# ------------------------------------------------------------ multi-seed

@dataclass
class Aggregate:
    n_runs: int
    mean: Dict[str, float]
    std: Dict[str, float]
    rows: List[Dict[str, object]]
    failures: List[Tuple[int, str]]

    def fmt(self, key: str) -> str:
        return f"{self.mean[key]:.3f}±{self.std[key]:.3f}"


METRIC_KEYS = ("accuracy", "eo_disparity", "dp_disparity")


def aggregate(rows: Sequence[Dict[str, object]], failures=()) -> Aggregate:
    mean, std = {}, {}
    for k in METRIC_KEYS:
        vals = np.array([float(r[k]) for r in rows])
        mean[k] = float(vals.mean()) if vals.size else math.nan
        std[k] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
    return Aggregate(len(rows), mean, std, list(rows), list(failures))


DataSource = Union[Tuple[Dataset, Dataset], Callable[[int], Tuple[Dataset, Dataset]]]


def multi_seed(config: TrainConfig, seeds: Union[int, Iterable[int]], datasets: DataSource) -> Aggregate:
    """Run ``config`` once per seed and report mean and sample std per metric.

    ``datasets`` is a fixed (train, test) pair or a callable mapping a seed to one.
    A run that aborts is logged and left out of the aggregate.
    """
    seeds = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    rows, failures = [], []
    for s in seeds:
        train_d, test_d = datasets(s) if callable(datasets) else datasets
        try:
            _, runlog = train(replace(config, seed=s), train_d, test_d)
        except (TrainingAborted, ValueError) as exc:
            log.warning("seed %s aborted: %s", s, exc)
            failures.append((s, str(exc)))
            continue
        rows.append(runlog.summary())
    return aggregate(rows, failures)


def config_dict(config: TrainConfig) -> Dict[str, object]:
    return asdict(config)
