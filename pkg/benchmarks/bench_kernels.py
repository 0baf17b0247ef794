"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeats N]

Times forward, backward and Adam on a subnet-sized problem, then one full
model fit per backend, and checks both backends agree numerically.
"""

import argparse
import time
import timeit

import numpy as np

from ggnam import backend
from ggnam.additive import Hyperparams, fit, make_partition
from ggnam.data import TabularDataset
from ggnam.nn import LayerSpec, init_network


def _kernels_case(k, batch, widths, act, repeats):
    rng = np.random.default_rng(0)
    net = init_network(LayerSpec(widths[0], tuple(widths[1:])), seed=0)
    X = rng.normal(size=(batch, widths[0]))
    dout = rng.normal(size=(batch, 1))
    gw = [np.zeros_like(w) for w in net.weights]
    gb = [np.zeros_like(b) for b in net.biases]
    theta = rng.normal(size=net.n_params)
    grad, m, v = rng.normal(size=theta.size), np.zeros(theta.size), np.zeros(theta.size)
    _, acts = k.forward(X, net.weights, net.biases, act)
    t_fwd = min(timeit.repeat(lambda: k.forward(X, net.weights, net.biases, act), number=200, repeat=repeats)) / 200
    t_bwd = min(timeit.repeat(lambda: k.backward(net.weights, acts, act, dout, gw, gb),
                              number=200, repeat=repeats)) / 200
    t_adam = min(timeit.repeat(lambda: k.adam_step(theta, grad, m, v, 1e-3, 0.9, 0.999, 1e-8, 1),
                               number=200, repeat=repeats)) / 200
    return t_fwd, t_bwd, t_adam


def _fit_case():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(4000, 6))
    y = X[:, 0] + np.sin(2 * X[:, 1]) + X[:, 2] * X[:, 3] + 0.05 * rng.normal(size=4000)
    names = [f"x{i}" for i in range(1, 7)]
    train = TabularDataset(X[:3200], y[:3200], names, "regression")
    val = TabularDataset(X[3200:], y[3200:], names, "regression")
    part = make_partition(6, [1, 5, 6], [[2], [3, 4]])
    hp = Hyperparams.for_task("regression", max_epochs=100, patience=1000)
    t = time.perf_counter()
    model, _ = fit(part, train, val, hyperparams=hp, seed=0)
    return time.perf_counter() - t, model.predict_batch(X[:100])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    names = ["python"]
    try:
        backend.get("compiled")
        names.append("compiled")
    except ImportError:
        print("compiled kernels not built; timing the numpy fallback only")
    cases = [(128, (1, 5), 0), (128, (13, 16, 8), 1), (128, (23, 5), 0), (1024, (4, 32), 0)]
    print(f"{'case':28s} {'backend':9s} {'forward us':>11s} {'backward us':>12s} {'adam us':>9s}")
    for batch, widths, act in cases:
        label = f"batch {batch} {'-'.join(map(str, widths))}-1 {('logistic', 'relu')[act]}"
        for name in names:
            f, b, a = _kernels_case(backend.get(name), batch, widths, act, args.repeats)
            print(f"{label:28s} {name:9s} {f * 1e6:11.1f} {b * 1e6:12.1f} {a * 1e6:9.1f}")
    preds = {}
    saved = backend.kernels
    for name in names:
        backend.kernels = backend.get(name)
        elapsed, preds[name] = _fit_case()
        print(f"fit 3200 rows x 100 epochs    {name:9s} {elapsed:8.2f} s")
    backend.kernels = saved
    if len(preds) == 2:
        print(f"max |prediction difference| between backends: {np.abs(preds['python'] - preds['compiled']).max():.2e}")


if __name__ == "__main__":
    main()
