"""Additive neural models: intercept + linear terms + one subnetwork per group.

LaLR, FCNN and NAM are partitions of the same model family:

* ``lalr``  every feature linear, no subnetworks;
* ``fcnn``  one subnetwork over all features;
* ``nam``   one subnetwork per feature.

Feature indices in :class:`PartitionSpec` are 1-based, matching the way
architectures are reported (``x1 ... xp``).
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .data import Scaler, TabularDataset
from .nn import (
    ACTIVATIONS,
    DenseNet,
    FlatParams,
    History,
    LayerSpec,
    LossSpec,
    OptimizerState,
    Schedule,
    ShapeError,
    init_network,
    max_relative_error,
    run_training,
)

TASK_LINK = {"regression": "identity", "binary_classification": "logistic"}
TASK_LOSS = {"regression": "mse", "binary_classification": "binary_cross_entropy"}


class PartitionError(ValueError):
    pass


class CoverageError(PartitionError):
    pass


class TermLookupError(LookupError):
    pass


@dataclass(frozen=True)
class PartitionSpec:
    p: int
    linear: tuple[int, ...]
    groups: tuple[tuple[int, ...], ...]
    allow_overlap: bool = False

    @property
    def linear0(self):
        return [u - 1 for u in self.linear]

    @property
    def groups0(self):
        return [[v - 1 for v in g] for g in self.groups]

    @property
    def nonlinear(self):
        return sorted({v for g in self.groups for v in g})

    def to_dict(self):
        return {
            "p": self.p,
            "linear": list(self.linear),
            "groups": [list(g) for g in self.groups],
            "allow_overlap": self.allow_overlap,
        }

    @classmethod
    def from_dict(cls, d):
        return make_partition(d["p"], d["linear"], d["groups"], d.get("allow_overlap", False))


def make_partition(p, linear, groups, allow_overlap=False) -> PartitionSpec:
    p = int(p)
    if p < 1:
        raise PartitionError("p must be at least 1")
    linear = tuple(sorted(int(u) for u in linear))
    groups = tuple(tuple(sorted(int(v) for v in g)) for g in groups)
    everything = [*linear, *(v for g in groups for v in g)]
    bad = sorted({i for i in everything if not 1 <= i <= p})
    if bad:
        raise PartitionError(f"indices out of range 1..{p}: {bad}")
    if any(len(g) == 0 for g in groups):
        raise PartitionError("groups must be nonempty")
    if len(set(linear)) != len(linear):
        raise PartitionError("duplicate linear indices")
    for g in groups:
        if len(set(g)) != len(g):
            raise PartitionError(f"duplicate indices inside group {g}")
    if allow_overlap:
        shared = sorted(set(linear) & {v for g in groups for v in g})
    else:
        counts = {}
        for i in everything:
            counts[i] = counts.get(i, 0) + 1
        shared = sorted(i for i, c in counts.items() if c > 1)
    if shared:
        raise PartitionError(f"indices assigned to more than one term: {shared}")
    uncovered = sorted(set(range(1, p + 1)) - set(everything))
    if uncovered:
        raise CoverageError(f"features not covered by the partition: {uncovered}")
    return PartitionSpec(p, linear, groups, bool(allow_overlap))


def preset_partition(kind, p) -> PartitionSpec:
    everything = list(range(1, p + 1))
    if kind == "lalr":
        return make_partition(p, everything, [])
    if kind == "fcnn":
        return make_partition(p, [], [everything])
    if kind == "nam":
        return make_partition(p, [], [[i] for i in everything])
    raise PartitionError(f"unknown preset {kind!r}")


@dataclass(frozen=True)
class Hyperparams:
    hidden_widths: tuple[int, ...] = (5,)
    activation: str = "logistic"
    l2_lambda: float = 0.0
    learning_rate: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 500
    patience: int = 25
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))

    @classmethod
    def for_task(cls, task, **overrides):
        """Subnetwork defaults: [5] logistic for classification, [16, 8] ReLU + L2 for regression."""
        if task == "binary_classification":
            base = dict(hidden_widths=(5,), activation="logistic", l2_lambda=0.0)
        elif task == "regression":
            base = dict(hidden_widths=(16, 8), activation="relu", l2_lambda=2e-4)
        else:
            raise ValueError(f"unknown task {task!r}")
        base.update(overrides)
        return cls(**base)

    def to_dict(self):
        d = dict(self.__dict__)
        d["hidden_widths"] = list(self.hidden_widths)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class GgnamModel:
    partition: PartitionSpec
    alpha: float
    beta: np.ndarray
    subnets: list[DenseNet]
    link: str
    scaler: Scaler
    feature_names: list[str] = field(default_factory=list)
    reference: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.link not in ("identity", "logistic"):
            raise ValueError(f"unknown link {self.link!r}")
        if self.beta.shape != (len(self.partition.linear),):
            raise ShapeError("beta length must equal the number of linear features")
        if len(self.subnets) != len(self.partition.groups):
            raise ShapeError("one subnetwork per group required")
        for net, g in zip(self.subnets, self.partition.groups):
            if net.spec.input_width != len(g):
                raise ShapeError(f"subnet for group {g} has input width {net.spec.input_width}")
        if not self.feature_names:
            self.feature_names = [f"x{i}" for i in range(1, self.partition.p + 1)]
        p = self.partition.p
        self.reference = np.zeros(p) if self.reference is None else np.asarray(self.reference, dtype=np.float64)
        self.lower = np.full(p, -1.0) if self.lower is None else np.asarray(self.lower, dtype=np.float64)
        self.upper = np.full(p, 1.0) if self.upper is None else np.asarray(self.upper, dtype=np.float64)

    @property
    def p(self):
        return self.partition.p

    @property
    def n_params(self):
        return 1 + self.beta.size + sum(n.n_params for n in self.subnets)

    def term_labels(self):
        names = ["intercept"]
        names += [f"x{u}" for u in self.partition.linear]
        names += ["f(" + ",".join(f"x{v}" for v in g) + ")" for g in self.partition.groups]
        return names

    def _check(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.p:
            raise ShapeError(f"expected {self.p} features, got shape {X.shape}")
        return X

    def term_matrix_standardized(self, Z):
        """Per-term contributions for standardized inputs, columns in canonical order."""
        n = Z.shape[0]
        cols = [np.full(n, self.alpha)]
        for u, b in zip(self.partition.linear0, self.beta):
            cols.append(b * Z[:, u])
        for net, g in zip(self.subnets, self.partition.groups0):
            cols.append(net.forward_batch(np.ascontiguousarray(Z[:, g])))
        return np.column_stack(cols)

    def contributions_batch(self, X):
        return self.term_matrix_standardized(self.scaler.transform(self._check(X)))

    def contributions(self, x):
        """Additive decomposition of one raw input as ``{term label: value}``."""
        terms = self.contributions_batch(x)[0]
        return dict(zip(self.term_labels(), terms.tolist()))

    def score_standardized(self, Z):
        terms = self.term_matrix_standardized(np.asarray(Z, dtype=np.float64))
        return canonical_sum(terms)

    def decision_function(self, X):
        """Pre-link scores for raw inputs."""
        return canonical_sum(self.contributions_batch(X))

    def inverse_link(self, s):
        if self.link == "logistic":
            return np.exp(-np.logaddexp(0.0, -s))
        return s

    def predict_batch(self, X):
        return self.inverse_link(self.decision_function(X))

    def predict(self, x):
        """``(pre_link, post_link)`` for one raw input vector."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise ShapeError("predict expects a single feature vector")
        s = self.decision_function(x)
        return float(s[0]), float(self.inverse_link(s)[0])

    def to_dict(self):
        return {
            "partition": self.partition.to_dict(),
            "alpha": self.alpha,
            "beta": self.beta.tolist(),
            "subnets": [n.to_dict() for n in self.subnets],
            "link": self.link,
            "scaler": self.scaler.to_dict(),
            "feature_names": list(self.feature_names),
            "reference": self.reference.tolist(),
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            partition=PartitionSpec.from_dict(d["partition"]),
            alpha=float(d["alpha"]),
            beta=np.array(d["beta"], dtype=np.float64),
            subnets=[DenseNet.from_dict(n) for n in d["subnets"]],
            link=d["link"],
            scaler=Scaler.from_dict(d["scaler"]),
            feature_names=list(d["feature_names"]),
            reference=np.array(d["reference"], dtype=np.float64),
            lower=np.array(d["lower"], dtype=np.float64),
            upper=np.array(d["upper"], dtype=np.float64),
        )

    def to_json(self, indent=None):
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json(indent=1))
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())


def canonical_sum(terms):
    """Left-to-right sum over term columns (intercept, linear by index, groups in order)."""
    acc = terms[:, 0].copy()
    for j in range(1, terms.shape[1]):
        acc += terms[:, j]
    return acc


class _ModelTrainable:
    """Flat-parameter view of a model for :func:`ggnam.nn.run_training`.

    Layout: ``[alpha, beta..., subnet_0 (W0, b0, W1, b1, ...), subnet_1 ...]``.
    """

    def __init__(self, model: GgnamModel):
        self.partition = model.partition
        self.link = model.link
        shapes = [(1,), (model.beta.size,)]
        for net in model.subnets:
            shapes += [s for fi, fo in net.spec.layer_shapes for s in ((fi, fo), (fo,))]
        self.params = FlatParams(shapes)
        self.theta, self.grad = self.params.theta, self.params.grad
        views = self.params.views
        views[0][0] = model.alpha
        views[1][...] = model.beta
        self.nets = []
        pos = 2
        l2 = np.zeros_like(self.theta)
        for net in model.subnets:
            n_layers = len(net.spec.layer_shapes)
            ws = views[pos:pos + 2 * n_layers:2]
            bs = views[pos + 1:pos + 2 * n_layers:2]
            gws = self.params.grad_views[pos:pos + 2 * n_layers:2]
            gbs = self.params.grad_views[pos + 1:pos + 2 * n_layers:2]
            for w, b, w0, b0 in zip(ws, bs, net.weights, net.biases):
                w[...] = w0
                b[...] = b0
            if net.l2_lambda > 0:
                for k in range(n_layers):
                    a, b = self.params.offsets[pos + 2 * k], self.params.offsets[pos + 2 * k + 1]
                    l2[a:b] = net.l2_lambda
            self.nets.append((net.spec, net.l2_lambda, ACTIVATIONS[net.spec.activation], ws, bs, gws, gbs))
            pos += 2 * n_layers
        self.l2 = l2 if l2.any() else None
        self._k = backend.kernels

    def split_inputs(self, Z):
        """Column blocks consumed by :meth:`scores`: linear block then one per group."""
        blocks = [np.ascontiguousarray(Z[:, self.partition.linear0])]
        blocks += [np.ascontiguousarray(Z[:, g]) for g in self.partition.groups0]
        return tuple(blocks)

    def scores(self, inputs):
        lin = inputs[0]
        s = lin @ self.params.views[1]
        s += self.params.views[0][0]
        caches = []
        for (spec, lam, act, ws, bs, _, _), z in zip(self.nets, inputs[1:]):
            out, acts = self._k.forward(z, ws, bs, act)
            s += out
            caches.append(acts)
        return s, (lin, caches)

    def backward(self, cache, dscore):
        lin, caches = cache
        g = self.params.grad_views
        g[0][0] = dscore.sum()
        np.matmul(dscore, lin, out=g[1])
        for (spec, lam, act, ws, bs, gws, gbs), acts in zip(self.nets, caches):
            self._k.backward(ws, acts, act, dscore, gws, gbs)

    def to_model(self, template: GgnamModel) -> GgnamModel:
        views = self.params.views
        subnets = [
            DenseNet(spec, [w.copy() for w in ws], [b.copy() for b in bs], lam)
            for spec, lam, act, ws, bs, _, _ in self.nets
        ]
        return GgnamModel(
            template.partition, float(views[0][0]), views[1].copy(), subnets, template.link,
            template.scaler, template.feature_names, template.reference, template.lower, template.upper,
        )


def init_model(partition: PartitionSpec, task: str, hyperparams: Hyperparams, seed: int,
               scaler: Scaler | None = None, alpha: float = 0.0, feature_names=None) -> GgnamModel:
    seeds = np.random.SeedSequence(seed).spawn(len(partition.groups))
    subnets = []
    for g, ss in zip(partition.groups, seeds):
        spec = LayerSpec(len(g), hyperparams.hidden_widths, hyperparams.activation)
        subnets.append(init_network(spec, hyperparams.l2_lambda, int(ss.generate_state(1)[0])))
    return GgnamModel(
        partition, float(alpha), np.zeros(len(partition.linear)), subnets, TASK_LINK[task],
        scaler or Scaler.identity(partition.p), feature_names or [],
    )


def _initial_intercept(y, task):
    if task == "binary_classification":
        rate = float(np.clip(y.mean(), 1e-6, 1 - 1e-6))
        return float(np.log(rate / (1.0 - rate)))
    return float(y.mean())


def fit(partition: PartitionSpec, train: TabularDataset, val: TabularDataset, task: str | None = None,
        hyperparams: Hyperparams | None = None, seed: int = 0,
        scaler: Scaler | None = None) -> tuple[GgnamModel, History]:
    """Jointly train intercept, linear weights and all subnetworks with early stopping."""
    task = task or train.task
    if train.n_features != partition.p or val.n_features != partition.p:
        raise ShapeError(f"partition covers {partition.p} features, data has {train.n_features}")
    hp = hyperparams or Hyperparams.for_task(task)
    scaler = scaler or Scaler.fit(train.X)
    seq = np.random.SeedSequence(seed)
    init_seed, shuffle_seed = (int(s.generate_state(1)[0]) for s in seq.spawn(2))
    model = init_model(partition, task, hp, init_seed, scaler,
                       alpha=_initial_intercept(train.y, task), feature_names=list(train.feature_names))
    model.reference = np.median(train.X, axis=0)
    model.lower = train.X.min(axis=0)
    model.upper = train.X.max(axis=0)
    t = _ModelTrainable(model)
    opt = OptimizerState("adam", hp.learning_rate, hp.beta1, hp.beta2, hp.eps)
    sched = Schedule(hp.max_epochs, hp.patience, hp.batch_size, shuffle_seed)
    history = run_training(
        t, t.split_inputs(scaler.transform(train.X)), train.y,
        t.split_inputs(scaler.transform(val.X)), val.y, LossSpec(TASK_LOSS[task]), opt, sched,
    )
    return t.to_model(model), history


def loss_for(model: GgnamModel) -> LossSpec:
    return LossSpec("binary_cross_entropy" if model.link == "logistic" else "mse")


def model_gradient(model: GgnamModel, X, y):
    """Analytic gradient of the training objective w.r.t. the flat parameter vector."""
    from .nn import penalized_loss_and_grad

    t = _ModelTrainable(model)
    value = penalized_loss_and_grad(t, t.split_inputs(model.scaler.transform(X)), np.asarray(y, float), loss_for(model))
    return value, t.grad.copy()


def model_gradient_check(model: GgnamModel, X, y, h: float = 1e-5) -> float:
    """Max relative error of backprop through the additive sum vs central differences."""
    from .nn import penalized_loss_and_grad

    loss = loss_for(model)
    y = np.asarray(y, dtype=np.float64)
    t = _ModelTrainable(model)
    inputs = t.split_inputs(model.scaler.transform(X))
    penalized_loss_and_grad(t, inputs, y, loss)
    analytic = t.grad.copy()

    def objective():
        s, _ = t.scores(inputs)
        value = loss.value(s, y)
        if t.l2 is not None:
            value += float(np.sum(t.l2 * t.theta * t.theta))
        return value

    return max_relative_error(objective, t.theta, analytic, h)


def _resolve_term(model: GgnamModel, term):
    part = model.partition
    if isinstance(term, (int, np.integer)):
        if term in part.linear:
            return "linear", part.linear.index(term)
        hits = [k for k, g in enumerate(part.groups) if g == (term,)]
        if hits:
            return "group", hits[0]
        if any(term in g for g in part.groups):
            raise TermLookupError(f"x{term} belongs to a multi-feature group; pass the whole group")
        raise TermLookupError(f"x{term} is not in the partition")
    group = tuple(sorted(int(v) for v in term))
    if group in part.groups:
        return "group", part.groups.index(group)
    if len(group) == 1 and group[0] in part.linear:
        return "linear", part.linear.index(group[0])
    raise TermLookupError(f"group {group} is not in the partition")


def term_features(model: GgnamModel, term):
    kind, k = _resolve_term(model, term)
    return (model.partition.linear[k],) if kind == "linear" else model.partition.groups[k]


def default_grid(model: GgnamModel, feature: int, n: int = 50):
    """Observed training range of a feature; its distinct values if there are few of them."""
    lo, hi = model.lower[feature - 1], model.upper[feature - 1]
    if float(lo).is_integer() and float(hi).is_integer() and hi - lo <= n:
        return np.arange(lo, hi + 1.0)
    return np.linspace(lo, hi, n)


def shape_function(model: GgnamModel, term, grid):
    """Term output over a raw-unit grid minus its value at the reference point.

    The reference is the grid point closest to the training median (per
    feature). Single-feature terms take a 1-D grid; a group of k features
    takes k grids and returns an array over their cartesian product.
    """
    kind, k = _resolve_term(model, term)
    feats = term_features(model, term)
    grids = [np.asarray(grid, dtype=np.float64)] if len(feats) == 1 else [np.asarray(g, dtype=np.float64) for g in grid]
    if len(grids) != len(feats):
        raise ShapeError(f"need one grid per feature of {feats}")
    idx = [f - 1 for f in feats]
    ref = np.array([g[np.argmin(np.abs(g - model.reference[i]))] for g, i in zip(grids, idx)])
    mesh = np.stack([m.ravel() for m in np.meshgrid(*grids, indexing="ij")], axis=1)
    points = np.vstack([mesh, ref[None, :]])
    Z = (points - model.scaler.mean[idx]) / model.scaler.std[idx]
    if kind == "linear":
        values = model.beta[k] * Z[:, 0]
    else:
        values = model.subnets[k].forward_batch(np.ascontiguousarray(Z))
    out = values[:-1] - values[-1]
    return out.reshape([g.size for g in grids]) if len(grids) > 1 else out


def export_shapes_csv(model: GgnamModel, path, terms=None, n_grid: int = 50):
    """Write shape functions of nonlinear terms (default) to one CSV.

    Single-feature terms produce rows ``(feature, grid_value, contribution)``;
    a multi-feature group emits one row per grid point with the coordinates
    joined by ``|`` in both the feature and grid_value columns.
    """
    if terms is None:
        terms = [g[0] if len(g) == 1 else g for g in model.partition.groups]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "grid_value", "contribution"])
        for term in terms:
            feats = term_features(model, term)
            names = [model.feature_names[f - 1] for f in feats]
            if len(feats) == 1:
                grid = default_grid(model, feats[0], n_grid)
                for g, v in zip(grid, shape_function(model, term, grid)):
                    w.writerow([names[0], repr(float(g)), repr(float(v))])
            else:
                grids = [default_grid(model, f, min(n_grid, 20)) for f in feats]
                values = shape_function(model, term, grids)
                for pos in itertools.product(*(range(g.size) for g in grids)):
                    coords = "|".join(repr(float(g[i])) for g, i in zip(grids, pos))
                    w.writerow(["|".join(names), coords, repr(float(values[pos]))])
