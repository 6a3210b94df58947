"""Config-driven experiments: build data, corrupt, train per (method, seed), tabulate."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from . import corruption, synthgen
from .dataset import ColumnSchema, Dataset, SplitSpec, load_csv, split, standardize
from .model import TrainingAborted
from .trainer import DISPLAY, METRIC_KEYS, METHODS, TrainConfig, aggregate, train

log = logging.getLogger(__name__)

CLEAN_TAU = "clean"
TRAIN_KEYS = ("tau", "alpha", "mu", "epochs", "warm_start_epochs", "batch_size", "learning_rate",
              "lambda_init", "phase2_epochs", "dp_form")


class ConfigError(ValueError):
    pass


@dataclass
class DataSpec:
    source: str = "synth"
    n_total: int = 3200
    synth_seed: int = 0
    csv_path: Optional[str] = None
    columns: Optional[Dict[str, object]] = None
    split: Tuple[float, float, float] = (0.625, 0.0625, 0.3125)
    split_seed: int = 0
    include_sensitive_feature: bool = True

    def __post_init__(self) -> None:
        if self.source not in ("synth", "csv"):
            raise ConfigError(f"data.source must be synth or csv, got {self.source!r}")
        if self.source == "csv" and (not self.csv_path or not self.columns):
            raise ConfigError("csv data needs csv_path and columns")
        self.split = tuple(float(v) for v in self.split)
        if len(self.split) != 3:
            raise ConfigError("data.split needs train, validation and test fractions")


@dataclass
class NoiseConfig:
    rates: List[float] = field(default_factory=lambda: [0.1])
    mode: str = corruption.ADVERSARIAL
    target_group: str = "auto"
    balance: str = corruption.CLASS
    seed: int = 0

    def __post_init__(self) -> None:
        if isinstance(self.rates, (int, float)):
            self.rates = [float(self.rates)]
        self.rates = [float(r) for r in self.rates]
        if not self.rates:
            raise ConfigError("noise.rates is empty")
        for r in self.rates:
            corruption.NoiseSpec(r, self.mode, self.target_group, self.seed, self.balance)

    def spec(self, rate: float) -> corruption.NoiseSpec:
        return corruption.NoiseSpec(rate, self.mode, self.target_group, self.seed, self.balance)


@dataclass
class ExperimentSpec:
    name: str = "experiment"
    data: DataSpec = field(default_factory=DataSpec)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    methods: List[str] = field(default_factory=lambda: ["LR", "ITLM", "Ours"])
    metric: str = "EO"
    seeds: List[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    train: Dict[str, object] = field(default_factory=dict)
    overrides: Dict[str, Dict[str, object]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.methods:
            raise ConfigError("method list is empty")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; choose from {list(METHODS)}")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        self.metric = str(self.metric).upper()
        bad = [k for k in self.train if k not in TRAIN_KEYS]
        for m, extra in self.overrides.items():
            bad += [k for k in extra if k not in TRAIN_KEYS]
        if bad:
            raise ConfigError(f"unknown training keys {bad}")
        for m in self.methods:
            for r in self.noise.rates:
                self.config(m, self.seeds[0], r)

    def config(self, method: str, seed: int, rate: Optional[float] = None) -> TrainConfig:
        kw = dict(self.train)
        kw.update(self.overrides.get(method, {}))
        if kw.get("tau") == CLEAN_TAU:
            # selection budget follows the known clean ratio of each noise rate
            rate = self.noise.rates[0] if rate is None else rate
            kw["tau"] = round(1.0 - rate, 12)
        return TrainConfig(method=method, metric=self.metric, seed=seed, **kw)

    def to_dict(self) -> Dict[str, object]:
        out = asdict(self)
        out["data"]["split"] = list(self.data.split)
        return out

    @classmethod
    def from_dict(cls, raw: Dict[str, object]) -> "ExperimentSpec":
        raw = dict(raw or {})
        known = {"name", "data", "noise", "methods", "metric", "seeds", "train", "overrides"}
        extra = set(raw) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        try:
            data = DataSpec(**(raw.pop("data", None) or {}))
            noise = NoiseConfig(**(raw.pop("noise", None) or {}))
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cls(data=data, noise=noise, **raw)


# ------------------------------------------------------------ config io

def shipped_configs() -> List[str]:
    root = resources.files("fairrobust") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def read_config(name_or_path: str) -> Dict[str, object]:
    """Parse a config file, or a shipped config given by bare name."""
    path = Path(name_or_path)
    if path.exists():
        text = path.read_text()
    else:
        shipped = resources.files("fairrobust") / "configs" / f"{name_or_path}.yaml"
        if not shipped.is_file():
            raise ConfigError(f"no config file {name_or_path!r}; shipped configs: {shipped_configs()}")
        text = shipped.read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {name_or_path!r}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {name_or_path!r} must be a mapping")
    return raw


def load_spec(name_or_path: str) -> ExperimentSpec:
    return ExperimentSpec.from_dict(read_config(name_or_path))


def with_overrides(spec: ExperimentSpec, **flags) -> ExperimentSpec:
    """Apply CLI-style overrides; ``None`` values are ignored."""
    raw = spec.to_dict()
    for key, val in flags.items():
        if val is None:
            continue
        if key == "noise_rates":
            raw["noise"]["rates"] = list(val)
        elif key in ("noise_mode", "target_group", "balance"):
            raw["noise"][{"noise_mode": "mode"}.get(key, key)] = val
        elif key in ("methods", "seeds", "metric", "name"):
            raw[key] = val
        elif key in TRAIN_KEYS:
            raw["train"][key] = val
        else:
            raise ConfigError(f"unknown override {key!r}")
    return ExperimentSpec.from_dict(raw)


# ------------------------------------------------------------ data

@dataclass
class Prepared:
    train: Dataset
    validation: Optional[Dataset]
    test: Dataset
    flipped_ids: np.ndarray
    chosen_group: Optional[str]


def base_data(d: DataSpec) -> Dataset:
    if d.source == "synth":
        data = synthgen.generate(synthgen.SynthSpec(n_total=d.n_total, seed=d.synth_seed))
    else:
        data = load_csv(d.csv_path, ColumnSchema.from_dict(d.columns))
    if d.include_sensitive_feature:
        data = Dataset(np.column_stack([data.features, data.sensitive]), data.labels, data.sensitive, data.ids)
    return data


def prepare(d: DataSpec, noise: NoiseConfig, rate: float) -> Prepared:
    """Split, standardize on train statistics, then corrupt the train labels only."""
    tr, va, te = split(base_data(d), SplitSpec(*d.split, seed=d.split_seed))
    if te is None:
        raise ConfigError("a test split is required")
    tr, stats = standardize(tr)
    te, _ = standardize(te, stats)
    if va is not None:
        va, _ = standardize(va, stats)
    out = corruption.corrupt(tr, noise.spec(rate), eval_data=te)
    chosen = out.chosen_group.tag if out.chosen_group is not None else None
    return Prepared(out.data, va, te, out.flipped_ids, chosen)


@lru_cache(maxsize=8)
def _prepared(spec_json: str, rate: float) -> Prepared:
    raw = json.loads(spec_json)
    spec = ExperimentSpec.from_dict(raw)
    return prepare(spec.data, spec.noise, rate)


# ------------------------------------------------------------ running

@dataclass
class CellResult:
    method: str
    seed: int
    rate: float
    row: Optional[Dict[str, object]]
    log_csv: Optional[str]
    error: Optional[str] = None


def run_label(method: str, rate: float, seed: int) -> str:
    return f"{method}_rate{rate:g}_seed{seed}"


def _run_cell(spec_json: str, method: str, seed: int, rate: float, run_dir: Optional[str]) -> CellResult:
    spec = ExperimentSpec.from_dict(json.loads(spec_json))
    try:
        data = _prepared(spec_json, rate)
        _, runlog = train(spec.config(method, seed, rate), data.train, data.test, data.validation)
    except (TrainingAborted, ValueError) as exc:
        return CellResult(method, seed, rate, None, None, f"{method} seed {seed} rate {rate}: {exc}")
    path = None
    if run_dir is not None:
        path = str(Path(run_dir) / f"{run_label(method, rate, seed)}.csv")
        runlog.to_csv(path)
    row = dict(runlog.summary(), noise_rate=rate)
    if data.chosen_group is not None:
        row["target_group"] = data.chosen_group
    return CellResult(method, seed, rate, row, path)


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    cells: List[CellResult]

    @property
    def failures(self) -> List[str]:
        return [c.error for c in self.cells if c.error]

    @property
    def ok(self) -> bool:
        return not self.failures

    def aggregate(self, method: str, rate: Optional[float] = None):
        rate = self.spec.noise.rates[0] if rate is None else rate
        rows = [c.row for c in self.cells if c.method == method and c.rate == rate and c.row is not None]
        fails = [(c.seed, c.error) for c in self.cells if c.method == method and c.rate == rate and c.error]
        return aggregate(rows, fails)


def run_experiment(spec: ExperimentSpec, out_dir=None, jobs: int = 1) -> ExperimentResult:
    """Every (rate, method, seed) cell; files are written by this process only."""
    spec_json = json.dumps(spec.to_dict(), sort_keys=True)
    run_dir = None
    if out_dir is not None:
        run_dir = Path(out_dir) / "runs"
        run_dir.mkdir(parents=True, exist_ok=True)
        run_dir = str(run_dir)
    cells = [(m, s, r) for r in spec.noise.rates for m in spec.methods for s in spec.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_cell, spec_json, m, s, r, run_dir) for m, s, r in cells]
            results = [f.result() for f in futures]
    else:
        results = [_run_cell(spec_json, m, s, r, run_dir) for m, s, r in cells]
    for c in results:
        if c.error:
            log.warning("run failed: %s", c.error)
    result = ExperimentResult(spec, results)
    if out_dir is not None:
        write_outputs(result, Path(out_dir))
    return result


# ------------------------------------------------------------ tables

def disparity_key(metric: str) -> str:
    return "eo_disparity" if metric == "EO" else "dp_disparity"


def table_rows(result: ExperimentResult, rate: Optional[float] = None) -> List[Dict[str, str]]:
    key = disparity_key(result.spec.metric)
    label = "EO Disp." if result.spec.metric == "EO" else "DP Disp."
    rows = []
    for m in result.spec.methods:
        agg = result.aggregate(m, rate)
        if agg.n_runs == 0:
            rows.append({"Method": DISPLAY[m], "Acc.": "failed", label: "failed"})
        else:
            rows.append({"Method": DISPLAY[m], "Acc.": agg.fmt("accuracy"), label: agg.fmt(key)})
    return rows


def render_text(rows: Sequence[Dict[str, str]]) -> str:
    cols = list(rows[0])
    widths = [max(len(c), *(len(r[c]) for r in rows)) for c in cols]
    line = lambda vals: "  ".join(v.ljust(w) for v, w in zip(vals, widths)).rstrip()
    out = [line(cols), line(["-" * w for w in widths])]
    out += [line([r[c] for c in cols]) for r in rows]
    return "\n".join(out) + "\n"


def sweep_rows(result: ExperimentResult) -> List[Dict[str, object]]:
    rows = []
    for r in result.spec.noise.rates:
        for m in result.spec.methods:
            agg = result.aggregate(m, r)
            row = {"method": m, "noise_rate": r, "n_runs": agg.n_runs}
            for k in METRIC_KEYS:
                row[f"{k}_mean"] = agg.mean[k]
                row[f"{k}_std"] = agg.std[k]
            rows.append(row)
    return rows


def _write_csv(path: Path, rows: Sequence[Dict[str, object]]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def write_outputs(result: ExperimentResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    resolved = result.spec.to_dict()
    (out / "resolved_config.yaml").write_text(yaml.safe_dump(resolved, sort_keys=False))
    rows = [c.row for c in result.cells if c.row is not None]
    summary = {"config": resolved, "runs": rows, "failures": result.failures}
    (out / "summary.json").write_text(json.dumps(summary, indent=1, default=_jsonable))
    for r in result.spec.noise.rates:
        table = table_rows(result, r)
        suffix = "" if len(result.spec.noise.rates) == 1 else f"_rate{r:g}"
        _write_csv(out / f"table{suffix}.csv", table)
        (out / f"table{suffix}.txt").write_text(render_text(table))
    if len(result.spec.noise.rates) > 1:
        _write_csv(out / "sweep.csv", sweep_rows(result))


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, float) and math.isnan(v):
        return None
    raise TypeError(f"cannot serialize {type(v)}")


def sweep(spec: ExperimentSpec, axis: str, values: Sequence[object], out_dir=None, jobs: int = 1
          ) -> List[Tuple[object, ExperimentResult]]:
    """Re-run ``spec`` once per value of a single training or noise key."""
    if axis in ("noise_rate", "noise_rates"):
        spec = with_overrides(spec, noise_rates=[float(v) for v in values])
        return [(None, run_experiment(spec, out_dir, jobs))]
    if axis not in TRAIN_KEYS:
        raise ConfigError(f"cannot sweep {axis!r}; choose noise_rate or one of {TRAIN_KEYS}")
    results = []
    rows = []
    for v in values:
        sub = None if out_dir is None else Path(out_dir) / f"{axis}_{v}"
        res = run_experiment(with_overrides(spec, **{axis: v}), sub, jobs)
        results.append((v, res))
        rows += [dict(r, **{axis: v}) for r in sweep_rows(res)]
    if out_dir is not None:
        _write_csv(Path(out_dir) / "sweep.csv", rows)
    return results
