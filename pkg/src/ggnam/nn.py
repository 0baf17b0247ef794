"""Small dense feedforward networks with exact backpropagation and Adam.

Every subnetwork of an additive model is a :class:`DenseNet`. Parameters of a
model under training live in one flat float64 vector; layer weights and
biases are reshaped views into it, so the optimizer is a single vectorized
update regardless of how many subnetworks a model has.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import backend

ACTIVATIONS = {"logistic": 0, "relu": 1, "identity": 2}
LOSSES = ("mse", "binary_cross_entropy")


class InvalidSpecError(ValueError):
    pass


class ShapeError(ValueError):
    pass


class InvalidInputError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, value=None):
        self.epoch = epoch
        self.value = value
        super().__init__(f"training diverged at epoch {epoch} (loss={value})")


@dataclass(frozen=True)
class LayerSpec:
    input_width: int
    hidden_widths: tuple[int, ...] = ()
    activation: str = "logistic"
    output_width: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        widths = (self.input_width, *self.hidden_widths, self.output_width)
        if any(int(w) != w or w < 1 for w in widths):
            raise InvalidSpecError(f"all layer widths must be positive integers, got {widths}")
        if self.activation not in ACTIVATIONS:
            raise InvalidSpecError(f"unknown activation {self.activation!r}")
        if self.output_width != 1:
            raise InvalidSpecError("only scalar-output networks are supported")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        widths = (self.input_width, *self.hidden_widths, self.output_width)
        return list(zip(widths[:-1], widths[1:]))

    @property
    def n_params(self) -> int:
        return sum(fan_in * fan_out + fan_out for fan_in, fan_out in self.layer_shapes)

    def to_dict(self):
        return {
            "input_width": self.input_width,
            "hidden_widths": list(self.hidden_widths),
            "activation": self.activation,
            "output_width": self.output_width,
        }


@dataclass
class DenseNet:
    spec: LayerSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    l2_lambda: float = 0.0

    def __post_init__(self):
        if self.l2_lambda < 0:
            raise InvalidSpecError("l2_lambda must be nonnegative")
        shapes = self.spec.layer_shapes
        if len(self.weights) != len(shapes) or len(self.biases) != len(shapes):
            raise ShapeError("number of layers does not match spec")
        for (fan_in, fan_out), w, b in zip(shapes, self.weights, self.biases):
            if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise ShapeError(
                    f"expected W{(fan_in, fan_out)} b{(fan_out,)}, got W{w.shape} b{b.shape}"
                )

    @property
    def n_params(self):
        return self.spec.n_params

    def forward_batch(self, x):
        """Pre-link scores for a (batch, input_width) matrix."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.spec.input_width:
            raise ShapeError(f"expected (n, {self.spec.input_width}) input, got {x.shape}")
        out, _ = backend.kernels.forward(
            x, self.weights, self.biases, ACTIVATIONS[self.spec.activation]
        )
        return out

    def flat_parameters(self):
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def to_dict(self):
        return {
            "spec": self.spec.to_dict(),
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "l2_lambda": self.l2_lambda,
        }

    @classmethod
    def from_dict(cls, d):
        spec = LayerSpec(
            d["spec"]["input_width"],
            tuple(d["spec"]["hidden_widths"]),
            d["spec"]["activation"],
            d["spec"].get("output_width", 1),
        )
        weights = [
            np.array(w, dtype=np.float64).reshape(shape)
            for w, shape in zip(d["weights"], spec.layer_shapes)
        ]
        biases = [np.array(b, dtype=np.float64) for b in d["biases"]]
        return cls(spec, weights, biases, float(d["l2_lambda"]))

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def init_network(spec: LayerSpec, l2_lambda: float = 0.0, seed: int = 0) -> DenseNet:
    """Glorot-uniform weights, zero biases; bit-identical for equal ``(spec, seed)``."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in spec.layer_shapes:
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return DenseNet(spec, weights, biases, float(l2_lambda))


def net_forward(net: DenseNet, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.spec.input_width:
        raise ShapeError(f"expected input of length {net.spec.input_width}, got shape {x.shape}")
    return float(net.forward_batch(x[None, :])[0])


@dataclass(frozen=True)
class LossSpec:
    kind: str = "mse"

    def __post_init__(self):
        if self.kind not in LOSSES:
            raise InvalidSpecError(f"unknown loss {self.kind!r}")

    def value(self, scores, y):
        if self.kind == "mse":
            r = scores - y
            return float(np.mean(r * r))
        return float(np.mean(np.logaddexp(0.0, scores) - y * scores))

    def grad(self, scores, y):
        """d(mean loss)/d(score) for every row."""
        n = scores.shape[0]
        if self.kind == "mse":
            return 2.0 * (scores - y) / n
        return (_sigmoid(scores) - y) / n


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


class FlatParams:
    """A flat parameter vector with per-layer reshaped views."""

    def __init__(self, shapes):
        sizes = [int(np.prod(s)) for s in shapes]
        self.theta = np.zeros(sum(sizes))
        self.grad = np.zeros_like(self.theta)
        self.offsets = np.cumsum([0, *sizes])
        self.views = [self.theta[a:b].reshape(s) for a, b, s in zip(self.offsets, self.offsets[1:], shapes)]
        self.grad_views = [self.grad[a:b].reshape(s) for a, b, s in zip(self.offsets, self.offsets[1:], shapes)]


class _NetTrainable:
    """Adapter exposing a DenseNet to :func:`run_training`."""

    def __init__(self, net: DenseNet):
        self.spec = net.spec
        self.l2_lambda = net.l2_lambda
        shapes = [s for fi, fo in net.spec.layer_shapes for s in ((fi, fo), (fo,))]
        self.params = FlatParams(shapes)
        for view, arr in zip(self.params.views, [a for p in zip(net.weights, net.biases) for a in p]):
            view[...] = arr
        self.theta = self.params.theta
        self.grad = self.params.grad
        self.weights = self.params.views[0::2]
        self.biases = self.params.views[1::2]
        self.l2 = None
        if net.l2_lambda > 0:
            self.l2 = np.zeros_like(self.theta)
            for a, b in zip(self.params.offsets[0::2], self.params.offsets[1::2]):
                self.l2[a:b] = net.l2_lambda
        self._act = ACTIVATIONS[net.spec.activation]
        self._k = backend.kernels

    def scores(self, inputs):
        return self._k.forward(inputs[0], self.weights, self.biases, self._act)

    def backward(self, cache, dscore):
        self._k.backward(
            self.weights, cache, self._act, dscore,
            self.params.grad_views[0::2], self.params.grad_views[1::2],
        )

    def to_net(self) -> DenseNet:
        return DenseNet(
            self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.l2_lambda
        )


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def flat(self):
        return np.concatenate([a.ravel() for p in zip(self.weights, self.biases) for a in p])


def _check_batch(batch, width=None):
    x, y = batch
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise InvalidInputError("batch must be a nonempty (n, d) matrix")
    if y.shape != (x.shape[0],):
        raise ShapeError(f"targets shape {y.shape} does not match {x.shape[0]} rows")
    if width is not None and x.shape[1] != width:
        raise ShapeError(f"expected {width} input columns, got {x.shape[1]}")
    return x, y


def penalized_loss_and_grad(trainable, inputs, y, loss: LossSpec):
    """Objective value (batch-mean loss + L2) and its gradient in ``trainable.grad``."""
    s, cache = trainable.scores(inputs)
    trainable.backward(cache, loss.grad(s, y))
    value = loss.value(s, y)
    if trainable.l2 is not None:
        value += float(np.sum(trainable.l2 * trainable.theta * trainable.theta))
        trainable.grad += 2.0 * trainable.l2 * trainable.theta
    return value


def backprop(net: DenseNet, batch, loss: LossSpec) -> Gradients:
    """Exact gradient of batch-mean loss + l2_lambda * sum(W**2) (biases unpenalized)."""
    x, y = _check_batch(batch, net.spec.input_width)
    t = _NetTrainable(net)
    penalized_loss_and_grad(t, (x,), y, loss)
    g = t.params.grad_views
    return Gradients([a.copy() for a in g[0::2]], [a.copy() for a in g[1::2]])


def max_relative_error(objective, theta, analytic, h):
    """Largest |analytic - central difference| / (|analytic| + |central| + 1e-12).

    ``objective()`` is evaluated with ``theta`` perturbed in place.
    """
    worst = 0.0
    for i in range(theta.shape[0]):
        orig = theta[i]
        theta[i] = orig + h
        up = objective()
        theta[i] = orig - h
        down = objective()
        theta[i] = orig
        numeric = (up - down) / (2.0 * h)
        err = abs(analytic[i] - numeric) / (abs(analytic[i]) + abs(numeric) + 1e-12)
        worst = max(worst, err)
    return worst


def gradient_check(net: DenseNet, batch, loss: LossSpec, h: float = 1e-5) -> float:
    x, y = _check_batch(batch, net.spec.input_width)
    t = _NetTrainable(net)
    penalized_loss_and_grad(t, (x,), y, loss)
    analytic = t.grad.copy()

    def objective():
        s, _ = t.scores((x,))
        value = loss.value(s, y)
        if t.l2 is not None:
            value += float(np.sum(t.l2 * t.theta * t.theta))
        return value

    return max_relative_error(objective, t.theta, analytic, h)


@dataclass
class OptimizerState:
    method: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    step_count: int = 0

    def __post_init__(self):
        if self.method != "adam":
            raise InvalidSpecError(f"unsupported optimizer {self.method!r}")
        if self.learning_rate < 0:
            raise InvalidSpecError("learning_rate must be nonnegative")

    def step(self, theta, grad):
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.step_count += 1
        backend.kernels.adam_step(
            theta, grad, self.m, self.v, self.learning_rate,
            self.beta1, self.beta2, self.eps, self.step_count,
        )


@dataclass(frozen=True)
class Schedule:
    max_epochs: int = 500
    patience: int = 25
    batch_size: int = 128
    seed: int = 0


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def best_val_loss(self):
        return self.val_loss[self.best_epoch]

    def to_dict(self):
        return {"train_loss": self.train_loss, "val_loss": self.val_loss, "best_epoch": self.best_epoch}


def run_training(trainable, inputs, y, val_inputs, val_y, loss: LossSpec,
                 opt: OptimizerState, schedule: Schedule) -> History:
    """Mini-batch Adam with early stopping; restores the best-validation parameters.

    ``inputs`` is a tuple of row-aligned arrays; rows are permuted jointly
    every epoch. Entry 0 of the history is the untrained state.
    """
    n = y.shape[0]
    if n == 0 or val_y.shape[0] == 0:
        raise InvalidInputError("train and validation sets must be nonempty")
    rng = np.random.default_rng(schedule.seed)
    theta, grad, l2 = trainable.theta, trainable.grad, trainable.l2
    bs = schedule.batch_size

    def eval_loss(inp, target):
        s, _ = trainable.scores(inp)
        return loss.value(s, target)

    history = History([eval_loss(inputs, y)], [eval_loss(val_inputs, val_y)], 0)
    best_theta = theta.copy()
    wait = 0
    for epoch in range(1, schedule.max_epochs + 1):
        perm = rng.permutation(n)
        shuffled = [a[perm] for a in inputs]
        ys = y[perm]
        total = 0.0
        for start in range(0, n, bs):
            stop = min(start + bs, n)
            batch = [a[start:stop] for a in shuffled]
            yb = ys[start:stop]
            s, cache = trainable.scores(batch)
            total += loss.value(s, yb) * (stop - start)
            trainable.backward(cache, loss.grad(s, yb))
            if l2 is not None:
                grad += 2.0 * l2 * theta
            opt.step(theta, grad)
        train_loss = total / n
        val_loss = eval_loss(val_inputs, val_y)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise TrainingDiverged(epoch, val_loss if not math.isfinite(val_loss) else train_loss)
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        if val_loss < history.val_loss[history.best_epoch]:
            history.best_epoch = epoch
            best_theta[:] = theta
            wait = 0
        else:
            wait += 1
            if wait >= schedule.patience:
                break
    theta[:] = best_theta
    return history


def train_epochs(net: DenseNet, train, val, loss: LossSpec, opt: OptimizerState | None = None,
                 schedule: Schedule | None = None) -> tuple[DenseNet, History]:
    """Train a copy of ``net``; the input net is left untouched."""
    opt = opt or OptimizerState()
    schedule = schedule or Schedule()
    x, y = _check_batch(train, net.spec.input_width)
    xv, yv = _check_batch(val, net.spec.input_width)
    t = _NetTrainable(net)
    history = run_training(t, (x,), y, (xv,), yv, loss, opt, schedule)
    return t.to_net(), history
