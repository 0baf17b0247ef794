"""Metrics and interaction diagnostics."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


class UndefinedMetricError(ValueError):
    pass


class DegenerateBinsError(ValueError):
    pass


class NonFiniteDerivativeError(ArithmeticError):
    pass


def _average_ranks(x):
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    boundaries = np.flatnonzero(np.diff(xs) != 0) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [xs.size]))
    ranks = np.empty(xs.size)
    ranks[order] = np.repeat((starts + ends + 1) / 2.0, ends - starts)
    return ranks


def auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied (positive, negative) pairs count 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes present")
    ranks = _average_ranks(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def rmse(predictions, targets) -> float:
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ValueError("predictions and targets differ in shape")
    if predictions.size == 0:
        raise ValueError("rmse of an empty set is undefined")
    r = predictions - targets
    return float(np.sqrt(np.mean(r * r)))


def metric_name(task):
    return "auc" if task == "binary_classification" else "rmse"


def score(task, predictions, targets) -> float:
    """Higher-is-better accuracy: AUC, or negative RMSE for regression."""
    if task == "binary_classification":
        return auc(predictions, targets)
    return -rmse(predictions, targets)


def metric_record(metric, split, value, seed):
    return {"metric": metric, "split": split, "value": value, "seed": seed}


@dataclass
class HessianMatrix:
    H: np.ndarray
    h: float
    feature_names: list[str]

    def off_diagonal(self):
        mask = ~np.eye(self.H.shape[0], dtype=bool)
        return self.H[mask]

    def top_pairs(self, k=5):
        """The k largest off-diagonal entries as ``(i, j, value)`` with 1-based i < j."""
        iu = np.triu_indices(self.H.shape[0], 1)
        vals = self.H[iu]
        order = np.argsort(-vals, kind="mergesort")[:k]
        return [(int(iu[0][o]) + 1, int(iu[1][o]) + 1, float(vals[o])) for o in order]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["", *self.feature_names])
            for name, row in zip(self.feature_names, self.H):
                w.writerow([name, *(repr(float(v)) for v in row)])


def integrated_hessian(f, X, h: float = 1e-3, feature_names=None) -> HessianMatrix:
    """Root-sum-square over rows of second partial derivatives of ``f``.

    ``f`` maps an (n, p) array to n scores. Mixed partials use the 4-point
    central stencil, pure second derivatives the 3-point one. Each (i, j)
    is computed once and mirrored, so the result is exactly symmetric.
    """
    X = np.asarray(X, dtype=np.float64)
    if h <= 0:
        raise ValueError("h must be positive")
    n, p = X.shape
    with np.errstate(invalid="ignore", over="ignore"):
        H = _hessian(f, X, h, p)
    names = list(feature_names) if feature_names is not None else [f"x{i + 1}" for i in range(p)]
    return HessianMatrix(H, h, names)


def _hessian(f, X, h, p):
    f0 = np.asarray(f(X), dtype=np.float64)
    H = np.zeros((p, p))
    eye = np.eye(p) * h
    for i in range(p):
        plus = np.asarray(f(X + eye[i]))
        minus = np.asarray(f(X - eye[i]))
        d2 = (plus - 2.0 * f0 + minus) / (h * h)
        _check_finite(d2, i, i)
        H[i, i] = np.sqrt(np.sum(d2 * d2))
        for j in range(i + 1, p):
            pp = np.asarray(f(X + eye[i] + eye[j]))
            pm = np.asarray(f(X + eye[i] - eye[j]))
            mp = np.asarray(f(X - eye[i] + eye[j]))
            mm = np.asarray(f(X - eye[i] - eye[j]))
            d2 = (pp - pm - mp + mm) / (4.0 * h * h)
            _check_finite(d2, i, j)
            H[i, j] = H[j, i] = np.sqrt(np.sum(d2 * d2))
    return H


def _check_finite(d2, i, j):
    bad = np.flatnonzero(~np.isfinite(d2))
    if bad.size:
        raise NonFiniteDerivativeError(
            f"non-finite second derivative at row {int(bad[0])} for pair (x{i + 1}, x{j + 1})"
        )


@dataclass
class JmpMatrix:
    P: np.ndarray
    counts: np.ndarray
    edges_i: np.ndarray
    edges_j: np.ndarray
    min_count: int
    names: tuple[str, str] = ("xi", "xj")

    SENTINEL = -0.1

    def to_csv(self, path):
        """Rows are bins of the first feature, columns bins of the second.

        The header carries the upper bin edges of the second feature; the
        first column carries the upper bin edges of the first.
        """
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"{self.names[0]}\\{self.names[1]}", *(repr(float(e)) for e in self.edges_j[1:])])
            for edge, row in zip(self.edges_i[1:], self.P):
                w.writerow([repr(float(edge)), *(repr(float(v)) for v in row)])


def _bin_edges(x, bins, equal_width):
    if equal_width:
        return np.linspace(x.min(), x.max(), bins + 1)
    return np.quantile(x, np.linspace(0.0, 1.0, bins + 1))


def _assign(x, edges):
    # interior edges only; the right-closed top bin keeps the maximum inside
    return np.clip(np.searchsorted(edges[1:-1], x, side="right"), 0, edges.size - 2)


def joint_marginal_matrix(X, y, i: int, j: int, bins: int = 10, min_count: int = 30,
                          equal_width: bool = False, names=None) -> JmpMatrix:
    """Empirical positive rate in each (bin of x_i, bin of x_j) box.

    ``i`` and ``j`` are 1-based feature indices. Bins are equal-population
    quantile bins unless ``equal_width``; boxes with fewer than
    ``min_count`` rows hold the sentinel -0.1.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xi, xj = X[:, i - 1], X[:, j - 1]
    for k, col in ((i, xi), (j, xj)):
        distinct = np.unique(col).size
        if distinct < bins:
            raise DegenerateBinsError(
                f"x{k} has only {distinct} distinct values; use bins <= {distinct}"
            )
    ei, ej = _bin_edges(xi, bins, equal_width), _bin_edges(xj, bins, equal_width)
    bi, bj = _assign(xi, ei), _assign(xj, ej)
    counts = np.zeros((bins, bins), dtype=np.int64)
    positives = np.zeros((bins, bins))
    np.add.at(counts, (bi, bj), 1)
    np.add.at(positives, (bi, bj), y)
    with np.errstate(invalid="ignore", divide="ignore"):
        P = np.where(counts >= min_count, positives / np.maximum(counts, 1), JmpMatrix.SENTINEL)
    return JmpMatrix(P, counts, ei, ej, min_count, tuple(names) if names else (f"x{i}", f"x{j}"))
