"""Architecture discovery for additive models.

1. Forward stepwise selection promotes features from the linear set to a
   single nonlinear block until the block model is within ``epsilon`` of a
   fully-connected network.
2. A separability matrix scores, for every pair (i, j) of nonlinear
   features, a model whose nonlinear part is forced into two overlapping
   groups that exclude i and j respectively. A drop of at least
   ``epsilon`` against the undivided model marks an interaction.
3. Connected components of the interaction graph become the groups of the
   final model.

Accuracies are "higher is better" everywhere: AUC for classification and
negative RMSE for regression.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .additive import GgnamModel, Hyperparams, fit, make_partition, preset_partition
from .data import PreparedData, TabularDataset
from .metrics import metric_name, metric_record, score
from .scheduler import derive_seed, run_jobs

DEFAULT_EPSILON_SELECT = {"binary_classification": 0.005, "regression": 0.002}
DEFAULT_EPSILON_GROUP = {"binary_classification": 0.01, "regression": 0.005}


class NothingToSeparate(ValueError):
    pass


@dataclass
class FitResult:
    model: GgnamModel
    val_loss: float
    val_score: float
    epochs: int
    best_epoch: int


def train_and_score(partition, train: TabularDataset, val: TabularDataset, task, hyperparams, seed):
    """Job body shared by every stage: fit, then score on the validation split."""
    model, history = fit(partition, train, val, task, hyperparams, seed)
    val_score = score(task, model.predict_batch(val.X), val.y)
    return FitResult(model, history.best_val_loss, val_score, len(history.val_loss) - 1, history.best_epoch)


def _baselines(train, val, task, hp, seed, workers):
    p = train.n_features
    jobs = {
        "lalr": (preset_partition("lalr", p), train, val, task, hp, derive_seed(seed, "lalr")),
        "fcnn": (preset_partition("fcnn", p), train, val, task, hp, derive_seed(seed, "fcnn")),
    }
    res = run_jobs(train_and_score, jobs, workers)
    return res["lalr"], res["fcnn"]


@dataclass
class SelectionTrace:
    epsilon: float
    metric: str
    lalr: tuple[float, float]
    fcnn: tuple[float, float]
    steps: list[dict] = field(default_factory=list)
    stop_reason: str = ""
    linear: list[int] = field(default_factory=list)
    nonlinear: list[int] = field(default_factory=list)

    @property
    def promoted(self):
        return [s["promoted"] for s in self.steps]

    def to_dict(self):
        return {
            "epsilon": self.epsilon,
            "metric": self.metric,
            "lalr": {"val_loss": self.lalr[0], "val_score": self.lalr[1]},
            "fcnn": {"val_loss": self.fcnn[0], "val_score": self.fcnn[1]},
            "steps": self.steps,
            "stop_reason": self.stop_reason,
            "linear": self.linear,
            "nonlinear": self.nonlinear,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"


def forward_stepwise_select(train: TabularDataset, val: TabularDataset, task=None, epsilon=None,
                            hyperparams: Hyperparams | None = None, seed: int = 0, workers: int = 1,
                            baselines: tuple[FitResult, FitResult] | None = None):
    """Split features into a linear set U and an ordered nonlinear list V.

    Returns ``(U, V, trace, final)`` where ``final`` is the fit of the last
    accepted architecture (the LaLR when nothing is promoted).
    """
    task = task or train.task
    epsilon = DEFAULT_EPSILON_SELECT[task] if epsilon is None else epsilon
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    hp = hyperparams or Hyperparams.for_task(task)
    p = train.n_features
    lalr, fcnn = baselines or _baselines(train, val, task, hp, seed, workers)
    trace = SelectionTrace(epsilon, metric_name(task), (lalr.val_loss, lalr.val_score),
                           (fcnn.val_loss, fcnn.val_score))
    U, V = list(range(1, p + 1)), []
    current = lalr
    if fcnn.val_loss >= lalr.val_loss:
        trace.stop_reason = "linear sufficient"
    while not trace.stop_reason:
        if fcnn.val_score - current.val_score <= epsilon:
            trace.stop_reason = "gap closed" if V else "linear sufficient"
            break
        if not U:
            trace.stop_reason = "all features nonlinear"
            break
        jobs = {}
        for u in U:
            block = sorted([*V, u])
            part = make_partition(p, [x for x in U if x != u], [block])
            jobs[u] = (part, train, val, task, hp, derive_seed(seed, "select", block))
        results = run_jobs(train_and_score, jobs, workers)
        m = min(U, key=lambda u: (results[u].val_loss, u))
        U.remove(m)
        V.append(m)
        current = results[m]
        trace.steps.append({
            "promoted": m,
            "val_loss": current.val_loss,
            "val_score": current.val_score,
            "candidates": {str(u): [results[u].val_loss, results[u].val_score] for u in sorted(results)},
        })
    trace.linear, trace.nonlinear = list(U), list(V)
    return U, V, trace, current


@dataclass
class SeparabilityMatrix:
    features: list[int]
    A: np.ndarray
    epsilon: float
    metric: str
    names: list[str] = field(default_factory=list)
    losses: np.ndarray | None = None

    def value(self, i, j):
        a, b = self.features.index(i), self.features.index(j)
        return float(self.A[min(a, b), max(a, b)])

    def full(self):
        """Symmetric matrix mirrored from the populated upper triangle."""
        return np.triu(self.A) + np.triu(self.A, 1).T

    def gaps(self):
        """``(i, j, A_ii - A_ij)`` for every pair i < j."""
        out = []
        for a, i in enumerate(self.features):
            for b in range(a + 1, len(self.features)):
                out.append((i, self.features[b], float(self.A[a, a] - self.A[a, b])))
        return out

    def to_csv(self, path):
        names = self.names or [f"x{i}" for i in self.features]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", *names])
            for a, name in enumerate(names):
                w.writerow([name, *("" if b < a else repr(float(self.A[a, b])) for b in range(len(names)))])

    def to_dict(self):
        return {
            "features": self.features,
            "names": self.names,
            "metric": self.metric,
            "epsilon": self.epsilon,
            "A": [[float(v) for v in row] for row in self.full()],
        }


def separability_matrix(train: TabularDataset, val: TabularDataset, task, U, V,
                        hyperparams: Hyperparams | None = None, seed: int = 0, workers: int = 1,
                        epsilon: float | None = None, diagonal: FitResult | None = None):
    """Validation accuracy of the undivided model (diagonal) and of every
    overlapping two-group split ``V \\ {i}``, ``V \\ {j}`` (upper triangle).

    The linear part U is included in every model. The diagonal model is
    trained once and shared by all diagonal entries.
    """
    task = task or train.task
    V = list(V)
    if len(V) < 2:
        raise NothingToSeparate(f"need at least two nonlinear features, got {V}")
    hp = hyperparams or Hyperparams.for_task(task)
    p = train.n_features
    jobs = {}
    if diagonal is None:
        jobs["diag"] = (make_partition(p, U, [sorted(V)]), train, val, task, hp,
                        derive_seed(seed, "separability", "diag"))
    for a, i in enumerate(V):
        for j in V[a + 1:]:
            gi = sorted(x for x in V if x != i)
            gj = sorted(x for x in V if x != j)
            part = make_partition(p, U, [gi, gj], allow_overlap=True)
            jobs[(i, j)] = (part, train, val, task, hp, derive_seed(seed, "separability", sorted((i, j))))
    results = run_jobs(train_and_score, jobs, workers)
    diag = diagonal or results["diag"]
    k = len(V)
    A = np.full((k, k), np.nan)
    L = np.full((k, k), np.nan)
    for a in range(k):
        A[a, a], L[a, a] = diag.val_score, diag.val_loss
        for b in range(a + 1, k):
            r = results[(V[a], V[b])]
            A[a, b], L[a, b] = r.val_score, r.val_loss
    eps = DEFAULT_EPSILON_GROUP[task] if epsilon is None else epsilon
    names = [train.feature_names[i - 1] for i in V]
    return SeparabilityMatrix(V, A, eps, metric_name(task), names, L)


@dataclass
class InteractionGraph:
    vertices: list[int]
    edges: list[tuple[int, int]]
    components: list[list[int]]


def interaction_graph(matrix: SeparabilityMatrix, epsilon=None, two_sided=False) -> InteractionGraph:
    """Edge (i, j) iff A_ii - A_ij >= epsilon (|A_ii - A_ij| >= epsilon when two-sided)."""
    eps = matrix.epsilon if epsilon is None else epsilon
    edges = []
    for i, j, gap in matrix.gaps():
        if (abs(gap) if two_sided else gap) >= eps:
            edges.append((i, j))
    parent = {v: v for v in matrix.features}

    def root(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for i, j in edges:
        ri, rj = root(i), root(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    comps = {}
    for v in matrix.features:
        comps.setdefault(root(v), []).append(v)
    components = sorted((sorted(c) for c in comps.values()), key=lambda c: c[0])
    return InteractionGraph(sorted(matrix.features), edges, components)


def group_nonlinear(matrix: SeparabilityMatrix, epsilon=None, two_sided=False) -> list[list[int]]:
    """Disjoint nonlinear groups: connected components of the interaction graph."""
    return interaction_graph(matrix, epsilon, two_sided).components


def _ranges(indices):
    """Compress sorted 1-based indices into report labels like ``x2-x5``."""
    out = []
    idx = sorted(indices)
    start = prev = None
    for i in idx + [None]:
        if start is not None and (i is None or i != prev + 1):
            out.append(f"x{start}" if start == prev else f"x{start}-x{prev}")
            start = None
        if i is not None and start is None:
            start = i
        prev = i
    return out


def _group_label(g):
    g = sorted(g)
    if len(g) > 3 and g == list(range(g[0], g[-1] + 1)):
        return f"(x{g[0]}, ..., x{g[-1]})"
    return "(" + ", ".join(f"x{v}" for v in g) + ")"


def _arch_cells(linear, groups):
    individual = sorted(g[0] for g in groups if len(g) == 1)
    multi = [g for g in groups if len(g) > 1]
    lin = ", ".join(_ranges(linear))
    if len(individual) > 2 and individual == list(range(individual[0], individual[-1] + 1)):
        ind = f"x{individual[0]}-x{individual[-1]}"
    else:
        ind = ", ".join(f"x{v}" for v in individual)
    return lin, ind, " ".join(_group_label(g) for g in multi)


def architecture_report(p, linear, groups, trace: SelectionTrace | None = None,
                        matrix: SeparabilityMatrix | None = None, epsilon_group=None,
                        feature_names=None) -> str:
    """Plain-text table with columns Linear | Individual nonlinear | Nonlinear groups."""
    everything = list(range(1, p + 1))
    rows = [
        ("LaLR", *_arch_cells(everything, [])),
        ("FCNN", *_arch_cells([], [everything])),
        ("NAM", *_arch_cells([], [[i] for i in everything])),
        ("GGNAM", *_arch_cells(linear, groups)),
    ]
    header = ("Model/Arch", "Linear", "Individual nonlinear", "Nonlinear groups")
    widths = [max(len(r[c]) for r in [header, *rows]) for c in range(4)]

    def fmt(r):
        return " | ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip()

    lines = [fmt(header), "-+-".join("-" * w for w in widths)]
    lines += [fmt(r) for r in rows]
    if trace is not None:
        order = ", ".join(f"x{m}" for m in trace.promoted) or "none"
        lines.append("")
        lines.append(f"selection order: {order} (epsilon={trace.epsilon!r} {trace.metric}; stop: {trace.stop_reason})")
    if matrix is not None:
        one = group_nonlinear(matrix, epsilon_group)
        two = group_nonlinear(matrix, epsilon_group, two_sided=True)
        eps = matrix.epsilon if epsilon_group is None else epsilon_group
        lines.append(f"interaction rule: A_ii - A_ij >= {eps!r} ({matrix.metric})")
        if one != two:
            lines.append("two-sided rule |A_ii - A_ij| >= eps would give groups: "
                         + " ".join(_group_label(g) for g in two))
    if feature_names is not None:
        lines.append("")
        lines.append("features: " + ", ".join(f"x{i}={n}" for i, n in enumerate(feature_names, 1)))
    return "\n".join(lines) + "\n"


@dataclass
class PipelineResult:
    model: GgnamModel
    linear: list[int]
    groups: list[list[int]]
    trace: SelectionTrace
    matrix: SeparabilityMatrix | None
    lalr: FitResult
    fcnn: FitResult
    final: FitResult
    report: str
    metrics: list[dict]


def fit_ggnam_pipeline(prepared: PreparedData, task=None, epsilon_select=None, epsilon_group=None,
                       hyperparams: Hyperparams | None = None, seed: int = 0, workers: int = 1,
                       out_dir=None) -> PipelineResult:
    """LaLR and FCNN, forward selection, separability matrix, grouping, final model.

    When ``out_dir`` is given each stage's artifacts are written before the
    next stage starts.
    """
    train, val, test = prepared.train, prepared.val, prepared.test
    task = task or train.task
    eps_s = DEFAULT_EPSILON_SELECT[task] if epsilon_select is None else epsilon_select
    eps_g = DEFAULT_EPSILON_GROUP[task] if epsilon_group is None else epsilon_group
    hp = hyperparams or Hyperparams.for_task(task)
    p = train.n_features
    out = Path(out_dir) if out_dir is not None else None

    lalr, fcnn = _baselines(train, val, task, hp, seed, workers)
    if out:
        lalr.model.save(out / "model_lalr.json")
        fcnn.model.save(out / "model_fcnn.json")

    U, V, trace, selected = forward_stepwise_select(
        train, val, task, eps_s, hp, seed, workers, baselines=(lalr, fcnn))
    if out:
        (out / "selection_trace.json").write_text(trace.to_json())

    matrix = None
    if len(V) >= 2:
        matrix = separability_matrix(train, val, task, U, V, hp, seed, workers, eps_g, diagonal=selected)
        if out:
            matrix.to_csv(out / "separability_matrix.csv")
            (out / "separability_matrix.json").write_text(json.dumps(matrix.to_dict(), indent=2) + "\n")
        groups = group_nonlinear(matrix, eps_g)
    else:
        groups = [[v] for v in sorted(V)]

    if groups == [sorted(V)] and selected.model.partition.linear == tuple(sorted(U)):
        final = selected
    else:
        part = make_partition(p, U, groups)
        final = train_and_score(part, train, val, task, hp, derive_seed(seed, "final", groups))
    if out:
        final.model.save(out / "model.json")

    metric = metric_name(task)
    metrics = []
    for name, res in (("lalr", lalr), ("fcnn", fcnn), ("ggnam", final)):
        for split_name, ds in (("val", val), ("test", test)):
            value = score(task, res.model.predict_batch(ds.X), ds.y)
            metrics.append(metric_record(metric, split_name, abs(value) if metric == "rmse" else value, seed)
                           | {"model": name})
    report = architecture_report(p, U, groups, trace, matrix, eps_g, train.feature_names)
    if out:
        (out / "architecture.txt").write_text(report)
    return PipelineResult(final.model, sorted(U), groups, trace, matrix, lalr, fcnn, final, report, metrics)
