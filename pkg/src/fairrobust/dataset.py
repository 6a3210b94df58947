"""Tabular datasets with a binary label and a binary sensitive attribute."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Mapping, NamedTuple, Optional, Tuple

import numpy as np


class DatasetError(ValueError):
    pass


class NonBinaryLabel(DatasetError):
    pass


class NonBinarySensitive(DatasetError):
    pass


class UnknownColumn(DatasetError):
    pass


class NonNumericFeature(DatasetError):
    pass


class MissingCell(DatasetError):
    pass


class EmptyFile(DatasetError):
    pass


class GroupKey(NamedTuple):
    y: int
    z: int

    @property
    def tag(self) -> str:
        return f"y{self.y}z{self.z}"

    @classmethod
    def parse(cls, text: str) -> "GroupKey":
        text = text.strip().lower()
        if len(text) != 4 or text[0] != "y" or text[2] != "z" or text[1] not in "01" or text[3] not in "01":
            raise ValueError(f"bad group key {text!r}, expected e.g. 'y1z0'")
        return cls(int(text[1]), int(text[3]))


GROUPS: Tuple[GroupKey, ...] = (GroupKey(0, 0), GroupKey(0, 1), GroupKey(1, 0), GroupKey(1, 1))


def _check_binary(values: np.ndarray, name: str, exc: type) -> None:
    bad = ~np.isin(values, (0, 1))
    if bad.any():
        raise exc(f"{name} must be in {{0,1}}; found {np.unique(values[bad])[:5].tolist()}")


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    sensitive: np.ndarray
    ids: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim == 1:
            features = features[:, None]
        labels = np.asarray(self.labels)
        sensitive = np.asarray(self.sensitive)
        n = features.shape[0]
        if n < 1:
            raise DatasetError("dataset must contain at least one row")
        if labels.shape != (n,) or sensitive.shape != (n,):
            raise DatasetError(
                f"length mismatch: features {n}, labels {labels.shape}, sensitive {sensitive.shape}"
            )
        _check_binary(labels, "labels", NonBinaryLabel)
        _check_binary(sensitive, "sensitive", NonBinarySensitive)
        ids = np.arange(n) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        if ids.shape != (n,):
            raise DatasetError("ids length mismatch")
        for arr in (features, ids):
            arr.setflags(write=False)
        labels = labels.astype(np.int64)
        sensitive = sensitive.astype(np.int64)
        labels.setflags(write=False)
        sensitive.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "sensitive", sensitive)
        object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def m(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.n

    def subset(self, idx: Iterable[int]) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.sensitive[idx], self.ids[idx])

    def with_labels(self, labels: np.ndarray) -> "Dataset":
        return Dataset(self.features, labels, self.sensitive, self.ids)

    def group_of(self, i: int) -> GroupKey:
        return GroupKey(int(self.labels[i]), int(self.sensitive[i]))


# ---------------------------------------------------------------- CSV input

ROLES = ("feature", "label", "sensitive", "ignore")


@dataclass
class ColumnSchema:
    """Column-role map for :func:`load_csv`.

    ``roles`` maps column name to one of feature/label/sensitive/ignore.
    ``label_map``/``sensitive_map`` translate raw cell text to 0/1; without
    a map the cells must already read as 0 or 1.
    """

    roles: Dict[str, str]
    label_map: Optional[Dict[str, int]] = None
    sensitive_map: Optional[Dict[str, int]] = None

    def __post_init__(self) -> None:
        for col, role in self.roles.items():
            if role not in ROLES:
                raise DatasetError(f"column {col!r}: unknown role {role!r}")
        n_label = sum(r == "label" for r in self.roles.values())
        n_sens = sum(r == "sensitive" for r in self.roles.values())
        n_feat = sum(r == "feature" for r in self.roles.values())
        if n_label != 1 or n_sens != 1:
            raise DatasetError("schema needs exactly one label and one sensitive column")
        if n_feat < 1:
            raise DatasetError("schema needs at least one feature column")

    @classmethod
    def from_dict(cls, raw: Mapping) -> "ColumnSchema":
        if "roles" in raw:
            roles = dict(raw["roles"])
        else:
            roles = {k: v for k, v in raw.items() if k not in ("label_map", "sensitive_map")}
        to_map = lambda m: None if m is None else {str(k): int(v) for k, v in m.items()}
        return cls(roles, to_map(raw.get("label_map")), to_map(raw.get("sensitive_map")))

    def column(self, role: str) -> str:
        return next(c for c, r in self.roles.items() if r == role)

    def feature_columns(self, header: Iterable[str]) -> list:
        return [c for c in header if self.roles.get(c) == "feature"]


def _binary_cell(raw: str, mapping: Optional[Dict[str, int]], exc: type, where: str) -> int:
    if mapping is not None:
        if raw not in mapping:
            raise exc(f"{where}: value {raw!r} not in schema map {sorted(mapping)}")
        value = mapping[raw]
    else:
        try:
            value = float(raw)
        except ValueError:
            raise exc(f"{where}: value {raw!r} is not 0/1") from None
    if value not in (0, 1):
        raise exc(f"{where}: value {raw!r} is not binary")
    return int(value)


def load_csv(path, schema: ColumnSchema) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyFile(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    if not rows:
        raise EmptyFile(f"{path}: no data rows")
    for col in schema.roles:
        if col not in header:
            raise UnknownColumn(f"{path}: schema column {col!r} not in header")
    pos = {c: i for i, c in enumerate(header)}
    feat_cols = schema.feature_columns(header)
    label_col, sens_col = schema.column("label"), schema.column("sensitive")

    features = np.empty((len(rows), len(feat_cols)))
    labels = np.empty(len(rows), dtype=np.int64)
    sensitive = np.empty(len(rows), dtype=np.int64)
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise DatasetError(f"{path}: row {r + 2} has {len(row)} cells, header has {len(header)}")
        for j, col in enumerate(feat_cols):
            cell = row[pos[col]].strip()
            if cell == "":
                raise MissingCell(f"{path}: row {r + 2}, column {col!r} is empty")
            try:
                features[r, j] = float(cell)
            except ValueError:
                raise NonNumericFeature(f"{path}: row {r + 2}, column {col!r}: {cell!r}") from None
            if not math.isfinite(features[r, j]):
                raise NonNumericFeature(f"{path}: row {r + 2}, column {col!r}: {cell!r}")
        for col, out, mapping, exc in (
            (label_col, labels, schema.label_map, NonBinaryLabel),
            (sens_col, sensitive, schema.sensitive_map, NonBinarySensitive),
        ):
            cell = row[pos[col]].strip()
            if cell == "":
                raise MissingCell(f"{path}: row {r + 2}, column {col!r} is empty")
            out[r] = _binary_cell(cell, mapping, exc, f"{path}: row {r + 2}, column {col!r}")
    return Dataset(features, labels, sensitive)


def write_csv(d: Dataset, path, feature_names: Optional[list] = None) -> None:
    names = feature_names or [f"x{j + 1}" for j in range(d.m)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*names, "label", "sensitive"])
        for i in range(d.n):
            w.writerow([*(repr(float(v)) for v in d.features[i]), int(d.labels[i]), int(d.sensitive[i])])


def default_schema(d_or_m) -> ColumnSchema:
    """Schema matching :func:`write_csv` output."""
    m = d_or_m.m if isinstance(d_or_m, Dataset) else int(d_or_m)
    roles = {f"x{j + 1}": "feature" for j in range(m)}
    roles.update(label="label", sensitive="sensitive")
    return ColumnSchema(roles)


# ------------------------------------------------------- standardize, split

@dataclass(frozen=True)
class Stats:
    mean: np.ndarray
    std: np.ndarray


def standardize(d: Dataset, stats: Optional[Stats] = None) -> Tuple[Dataset, Stats]:
    if stats is None:
        stats = Stats(d.features.mean(axis=0), d.features.std(axis=0))
    if stats.mean.shape != (d.m,) or stats.std.shape != (d.m,):
        raise DatasetError(f"stats have dimension {stats.mean.shape}, data has {d.m} columns")
    # constant columns map to zeros
    scale = np.where(stats.std > 0, stats.std, np.inf)
    x = (d.features - stats.mean) / scale
    return Dataset(x, d.labels, d.sensitive, d.ids), stats


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float
    validation_fraction: float
    test_fraction: float
    seed: int = 0

    def __post_init__(self) -> None:
        fr = (self.train_fraction, self.validation_fraction, self.test_fraction)
        if any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise DatasetError(f"split fractions must be nonnegative and sum to 1, got {fr}")


def split(d: Dataset, spec: SplitSpec) -> Tuple[Dataset, Dataset, Dataset]:
    """Seeded shuffle, then contiguous cut into train/validation/test.

    An empty part is returned as ``None`` only when its fraction is zero.
    """
    n = d.n
    n_train = int(round(spec.train_fraction * n))
    n_val = int(round(spec.validation_fraction * n))
    n_val = min(n_val, n - n_train)
    n_test = n - n_train - n_val
    for name, frac, size in (
        ("train", spec.train_fraction, n_train),
        ("validation", spec.validation_fraction, n_val),
        ("test", spec.test_fraction, n_test),
    ):
        if frac > 0 and size == 0:
            raise DatasetError(f"{name} split rounds to zero rows (n={n}, fraction={frac})")
    perm = np.random.default_rng(spec.seed).permutation(n)
    parts = np.split(perm, [n_train, n_train + n_val])
    return tuple(d.subset(np.sort(p)) if len(p) else None for p in parts)  # type: ignore[return-value]


def group_index(d: Dataset) -> Dict[GroupKey, np.ndarray]:
    return {
        g: np.flatnonzero((d.labels == g.y) & (d.sensitive == g.z)) for g in GROUPS
    }


def group_sizes(d: Dataset) -> Dict[GroupKey, int]:
    return {g: len(ix) for g, ix in group_index(d).items()}
