"""Independent reference implementations used as test oracles."""

import numpy as np


def brute_force_auc(scores, labels):
    """Fraction of (positive, negative) pairs ranked correctly; ties count 1/2."""
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = 0.0
    for a in pos:
        for b in neg:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(pos) * len(neg))


def random_auc_instance(rng, n_max=200):
    """Scores with deliberate ties and both classes present."""
    n = int(rng.integers(2, n_max + 1))
    labels = rng.integers(0, 2, size=n)
    labels[0], labels[1] = 0, 1
    levels = int(rng.integers(1, n + 1))
    scores = rng.integers(0, levels, size=n) / levels + (rng.random() < 0.5) * rng.normal(size=n)
    return scores, labels


def product_fn(X):
    return X[:, 0] * X[:, 1]


def additive_fn(X):
    return np.sin(X[:, 0]) + X[:, 1] ** 3 + np.exp(0.3 * X[:, 2]) - 2 * X[:, 3]
