"""Tabular ingestion: CSV loading, mean imputation, correlation pruning,
train/validation/test splitting and standardization.

All statistics (imputation means, correlation decisions, scaler moments) are
computed on the training split only and then applied to the other splits.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

TASKS = ("regression", "binary_classification")
DEFAULT_MISSING = ("", "NA", "?")


class DataError(Exception):
    """Base class for every data-stage failure (CLI exit code 3)."""


class LoadError(DataError):
    pass


class ImputationError(DataError):
    pass


class ManifestError(ValueError):
    pass


@dataclass
class TabularDataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: list[str]
    task: str
    source: str | None = None
    log: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"X {self.X.shape} and y {self.y.shape} are not row-aligned")
        if len(self.feature_names) != self.X.shape[1]:
            raise ValueError("feature_names length does not match column count")

    @property
    def n_rows(self):
        return self.X.shape[0]

    @property
    def n_features(self):
        return self.X.shape[1]

    def subset(self, rows):
        return replace(self, X=self.X[rows], y=self.y[rows], log=list(self.log))

    def select_features(self, names):
        missing = [n for n in names if n not in self.feature_names]
        if missing:
            raise DataError(f"dataset lacks features {missing}")
        idx = [self.feature_names.index(n) for n in names]
        return replace(self, X=self.X[:, idx], feature_names=list(names), log=list(self.log))

    def missing_count(self):
        return int(np.isnan(self.X).sum())


@dataclass(frozen=True)
class Manifest:
    name: str
    path: Path
    target: str
    task: str
    missing: tuple[str, ...] = DEFAULT_MISSING
    drop: tuple[str, ...] = ()
    categorical: tuple[str, ...] = ()
    prune_correlated: bool = False
    correlation_threshold: float = 0.95


def load_manifest(path) -> Manifest:
    """Read a flat key-value (TOML) dataset manifest.

    ``path`` inside the manifest is resolved relative to the manifest file,
    and may be overridden at run time through ``GGNAM_DATA_DIR``.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ManifestError(f"{path}: {exc}") from exc
    for key in ("path", "target", "task"):
        if key not in raw:
            raise ManifestError(f"{path}: missing required key {key!r}")
    if raw["task"] not in TASKS:
        raise ManifestError(f"{path}: task must be one of {TASKS}")
    data_path = Path(raw["path"])
    if not data_path.is_absolute():
        data_dir = os.environ.get("GGNAM_DATA_DIR")
        base = Path(data_dir) if data_dir else path.parent
        data_path = base / data_path
    return Manifest(
        name=raw.get("name", path.stem),
        path=data_path,
        target=raw["target"],
        task=raw["task"],
        missing=tuple(raw.get("missing", DEFAULT_MISSING)),
        drop=tuple(raw.get("drop", ())),
        categorical=tuple(raw.get("categorical", ())),
        prune_correlated=bool(raw.get("prune_correlated", False)),
        correlation_threshold=float(raw.get("correlation_threshold", 0.95)),
    )


def load_csv(path, target_column, task, missing=DEFAULT_MISSING, drop=(), categorical=()):
    """Parse a headed CSV into a raw dataset (missing cells become NaN).

    Columns listed in ``categorical`` are mapped to integer codes in sorted
    order of their (stripped) labels; every other cell must parse as a float.
    """
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"data file not found: {path}")
    missing = {m.strip() for m in missing}
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise LoadError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    if target_column not in header:
        raise LoadError(f"{path}: target column {target_column!r} not in header")
    unknown = [c for c in (*drop, *categorical) if c not in header]
    if unknown:
        raise LoadError(f"{path}: columns {unknown} not in header")

    features = [h for h in header if h != target_column and h not in drop]
    col = {h: i for i, h in enumerate(header)}
    codes = {}
    for name in categorical:
        labels = sorted({r[col[name]].strip() for r in rows} - missing)
        codes[name] = {label: float(k) for k, label in enumerate(labels)}

    def parse(cell, name, lineno):
        cell = cell.strip()
        if cell in missing:
            return math.nan
        if name in codes:
            return codes[name][cell]
        try:
            return float(cell)
        except ValueError:
            raise LoadError(f"{path}: line {lineno}, column {name!r}: cannot parse {cell!r}") from None

    X = np.empty((len(rows), len(features)))
    y = np.empty(len(rows))
    for r, row in enumerate(rows):
        lineno = r + 2
        if len(row) != len(header):
            raise LoadError(f"{path}: line {lineno} has {len(row)} fields, expected {len(header)}")
        for j, name in enumerate(features):
            X[r, j] = parse(row[col[name]], name, lineno)
        y[r] = parse(row[col[target_column]], target_column, lineno)
        if math.isnan(y[r]):
            raise LoadError(f"{path}: line {lineno}: missing target")
    if not np.all(np.isfinite(X[~np.isnan(X)])):
        raise LoadError(f"{path}: non-finite values present")
    if task == "binary_classification" and not np.isin(y, (0.0, 1.0)).all():
        raise LoadError(f"{path}: classification target must be 0/1")
    ds = TabularDataset(X, y, features, task, source=str(path))
    ds.log.append(f"loaded {ds.n_rows} rows x {ds.n_features} features from {path.name}")
    if codes:
        ds.log.append(f"categorical codes: {json.dumps(codes, sort_keys=True)}")
    return ds


def load_from_manifest(manifest: Manifest) -> TabularDataset:
    return load_csv(
        manifest.path, manifest.target, manifest.task,
        missing=manifest.missing, drop=manifest.drop, categorical=manifest.categorical,
    )


def column_means(dataset: TabularDataset):
    counts = (~np.isnan(dataset.X)).sum(axis=0)
    empty = [dataset.feature_names[j] for j in np.flatnonzero(counts == 0)]
    if empty:
        raise ImputationError(f"no observed values to impute from in columns {empty}")
    return np.nanmean(dataset.X, axis=0)


def impute_means(dataset: TabularDataset, source: TabularDataset | None = None):
    """Replace missing cells with column means of ``source`` (default: the dataset itself)."""
    means = column_means(source if source is not None else dataset)
    mask = np.isnan(dataset.X)
    X = np.where(mask, means[None, :], dataset.X)
    out = replace(dataset, X=X, log=list(dataset.log))
    out.log.append(f"imputed {int(mask.sum())} cells with training means")
    return out


def prune_correlated(dataset: TabularDataset, threshold: float = 0.95, source: TabularDataset | None = None):
    """Greedy column-order scan dropping columns with |r| > threshold to a kept earlier column.

    Returns the pruned dataset and a list of ``(removed, partner, r)``.
    """
    ref = source if source is not None else dataset
    if np.isnan(ref.X).any():
        raise DataError("prune_correlated requires imputed data")
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.corrcoef(ref.X, rowvar=False)
    corr = np.atleast_2d(corr)
    kept, removed = [], []
    for j in range(ref.n_features):
        partner = None
        for k in kept:
            r = corr[j, k]
            if np.isfinite(r) and abs(r) > threshold:
                partner = (k, float(r))
                break
        if partner is None:
            kept.append(j)
        else:
            removed.append((ref.feature_names[j], ref.feature_names[partner[0]], partner[1]))
    out = dataset.select_features([dataset.feature_names[j] for j in kept])
    out.log.append(f"pruned {len(removed)} correlated features (|r| > {threshold})")
    return out, removed


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.2
    validation_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        for f in (self.test_fraction, self.validation_fraction):
            if not 0.0 < f < 1.0:
                raise ValueError("split fractions must lie in (0, 1)")

    def sizes(self, n):
        n_test = math.floor(n * self.test_fraction + 0.5)
        n_val = math.floor((n - n_test) * self.validation_fraction + 0.5)
        return n - n_test - n_val, n_val, n_test


def split_indices(n, spec: SplitSpec):
    if n < 10:
        raise DataError(f"need at least 10 rows to split, got {n}")
    n_train, n_val, _ = spec.sizes(n)
    perm = np.random.default_rng(spec.seed).permutation(n)
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def split(dataset: TabularDataset, spec: SplitSpec):
    return tuple(dataset.subset(idx) for idx in split_indices(dataset.n_rows, spec))


@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=np.float64)
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        constant = std == 0.0
        return cls(mean, np.where(constant, 1.0, std), constant)

    @classmethod
    def identity(cls, p):
        return cls(np.zeros(p), np.ones(p), np.zeros(p, dtype=bool))

    def transform(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    def inverse_transform(self, Z):
        return np.asarray(Z, dtype=np.float64) * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "constant": self.constant.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64),
                   np.array(d["constant"], dtype=bool))


def standardize(train: TabularDataset, *others: TabularDataset):
    """z-score every split with training statistics; returns (scaled splits, scaler)."""
    scaler = Scaler.fit(train.X)
    scaled = [replace(d, X=scaler.transform(d.X), log=list(d.log)) for d in (train, *others)]
    return scaled, scaler


@dataclass
class PreparedData:
    """Imputed, pruned splits in raw feature units plus their provenance."""

    train: TabularDataset
    val: TabularDataset
    test: TabularDataset
    removed: list[tuple[str, str, float]]
    imputed_cells: int
    split_spec: SplitSpec
    source: str | None = None
    source_sha256: str | None = None

    @property
    def feature_names(self):
        return self.train.feature_names

    def provenance(self):
        return {
            "source": self.source,
            "source_sha256": self.source_sha256,
            "split": {
                "test_fraction": self.split_spec.test_fraction,
                "validation_fraction": self.split_spec.validation_fraction,
                "seed": self.split_spec.seed,
                "sizes": [self.train.n_rows, self.val.n_rows, self.test.n_rows],
            },
            "imputed_cells": self.imputed_cells,
            "removed_features": [
                {"feature": a, "partner": b, "r": r} for a, b, r in self.removed
            ],
            "features": self.feature_names,
            "log": self.train.log,
        }


def prepare(dataset: TabularDataset, split_spec: SplitSpec, prune: bool = False,
            threshold: float = 0.95) -> PreparedData:
    """Split first, then impute and prune using training rows only."""
    train, val, test = split(dataset, split_spec)
    imputed = int(np.isnan(dataset.X).sum())
    if imputed:
        train, val, test = (impute_means(d, source=train) for d in (train, val, test))
    removed = []
    if prune:
        train, removed = prune_correlated(train, threshold)
        val = val.select_features(train.feature_names)
        test = test.select_features(train.feature_names)
    sha = None
    if dataset.source and Path(dataset.source).is_file():
        sha = hashlib.sha256(Path(dataset.source).read_bytes()).hexdigest()
    return PreparedData(train, val, test, removed, imputed, split_spec, dataset.source, sha)


def prepare_from_manifest(manifest: Manifest, seed: int) -> PreparedData:
    ds = load_from_manifest(manifest)
    return prepare(ds, SplitSpec(seed=seed), prune=manifest.prune_correlated,
                   threshold=manifest.correlation_threshold)


def write_dataset_csv(dataset: TabularDataset, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*dataset.feature_names, "target"])
        for row, target in zip(dataset.X, dataset.y):
            w.writerow([repr(float(v)) for v in row] + [repr(float(target))])


def write_splits(prepared: PreparedData, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in ("train", "val", "test"):
        write_dataset_csv(getattr(prepared, name), out_dir / f"{name}.csv")
    (out_dir / "provenance.json").write_text(json.dumps(prepared.provenance(), indent=2) + "\n")
