"""Pure numpy implementations of the dense-network hot kernels.

These mirror ``ggnam._kernels`` (Cython) one to one and are used whenever the
compiled extension is unavailable or ``GGNAM_BACKEND=python`` is set.

Activation codes: 0 = logistic, 1 = relu, 2 = identity. Hidden layers use the
network activation; the final layer is always identity.
"""

import numpy as np

LOGISTIC, RELU, IDENTITY = 0, 1, 2


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(z, act):
    if act == LOGISTIC:
        return _sigmoid(z)
    if act == RELU:
        return np.maximum(z, 0.0)
    return z


def forward(x, weights, biases, act):
    """Forward pass over a batch.

    Returns the (batch,) output and the list of layer activations
    ``[x, a_1, ..., a_L]`` needed by :func:`backward`.
    """
    acts = [x]
    a = x
    last = len(weights) - 1
    for k, (w, b) in enumerate(zip(weights, biases)):
        z = a @ w
        z += b
        a = z if k == last else _activate(z, act)
        acts.append(a)
    return a[:, 0].copy(), acts


def backward(weights, acts, act, dout, grad_weights, grad_biases):
    """Accumulate parameter gradients for upstream gradient ``dout``.

    Gradients are written (not added) into the preallocated ``grad_*`` arrays.
    """
    delta = dout.reshape(-1, 1)
    for k in range(len(weights) - 1, -1, -1):
        np.matmul(acts[k].T, delta, out=grad_weights[k])
        np.sum(delta, axis=0, out=grad_biases[k])
        if k == 0:
            break
        da = delta @ weights[k].T
        a = acts[k]
        if act == LOGISTIC:
            delta = da * a * (1.0 - a)
        elif act == RELU:
            delta = da * (a > 0.0)
        else:
            delta = da


def adam_step(theta, grad, m, v, lr, beta1, beta2, eps, t):
    """One in-place Adam update of the flat parameter vector."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    theta -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
