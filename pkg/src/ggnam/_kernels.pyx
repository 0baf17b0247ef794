# cython: language_level=3
"""Compiled dense-network kernels.

Same contract as ``ggnam._kernels_py``; loops run without the GIL so several
trainings can share a process.
"""

import numpy as np

from libc.math cimport exp, sqrt, pow

cdef enum:
    LOGISTIC = 0
    RELU = 1
    IDENTITY = 2


cdef inline double _sigmoid(double z) noexcept nogil:
    cdef double ez
    if z >= 0.0:
        return 1.0 / (1.0 + exp(-z))
    ez = exp(z)
    return ez / (1.0 + ez)


cdef void _affine(const double[:, ::1] a, const double[:, ::1] w,
                  const double[::1] b, double[:, ::1] z, int act,
                  bint last) noexcept nogil:
    cdef Py_ssize_t n = a.shape[0], fan_in = a.shape[1], fan_out = w.shape[1]
    cdef Py_ssize_t r, i, j
    cdef double s, aij
    for r in range(n):
        for j in range(fan_out):
            z[r, j] = b[j]
        for i in range(fan_in):
            aij = a[r, i]
            if aij == 0.0:
                continue
            for j in range(fan_out):
                z[r, j] += aij * w[i, j]
        if not last:
            if act == LOGISTIC:
                for j in range(fan_out):
                    z[r, j] = _sigmoid(z[r, j])
            elif act == RELU:
                for j in range(fan_out):
                    if z[r, j] < 0.0:
                        z[r, j] = 0.0


def forward(x, list weights, list biases, int act):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t k, n_layers = len(weights)
    xc = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] a_prev = xc
    cdef double[:, ::1] w
    cdef double[::1] b
    cdef double[:, ::1] z
    acts = [xc]
    for k in range(n_layers):
        w = weights[k]
        b = biases[k]
        out = np.empty((n, w.shape[1]), dtype=np.float64)
        z = out
        with nogil:
            _affine(a_prev, w, b, z, act, k == n_layers - 1)
        acts.append(out)
        a_prev = z
    return acts[n_layers][:, 0].copy(), acts


def backward(list weights, list acts, int act, dout, list grad_weights,
             list grad_biases):
    cdef Py_ssize_t n = dout.shape[0]
    cdef Py_ssize_t k, r, i, j, fan_in, fan_out
    cdef double[:, ::1] delta = np.ascontiguousarray(dout, dtype=np.float64).reshape(n, 1)
    cdef double[:, ::1] delta_prev
    cdef double[:, ::1] a
    cdef double[:, ::1] w
    cdef double[:, ::1] gw
    cdef double[::1] gb
    cdef double s, d
    for k in range(len(weights) - 1, -1, -1):
        a = acts[k]
        w = weights[k]
        gw = grad_weights[k]
        gb = grad_biases[k]
        fan_in = w.shape[0]
        fan_out = w.shape[1]
        with nogil:
            for i in range(fan_in):
                for j in range(fan_out):
                    gw[i, j] = 0.0
            for j in range(fan_out):
                gb[j] = 0.0
            for r in range(n):
                for j in range(fan_out):
                    d = delta[r, j]
                    gb[j] += d
                    for i in range(fan_in):
                        gw[i, j] += a[r, i] * d
        if k == 0:
            break
        delta_prev = np.empty((n, fan_in), dtype=np.float64)
        with nogil:
            for r in range(n):
                for i in range(fan_in):
                    s = 0.0
                    for j in range(fan_out):
                        s += delta[r, j] * w[i, j]
                    if act == LOGISTIC:
                        s *= a[r, i] * (1.0 - a[r, i])
                    elif act == RELU:
                        if a[r, i] <= 0.0:
                            s = 0.0
                    delta_prev[r, i] = s
        delta = delta_prev


def adam_step(double[::1] theta, const double[::1] grad, double[::1] m,
              double[::1] v, double lr, double beta1, double beta2,
              double eps, long t):
    cdef Py_ssize_t i, n = theta.shape[0]
    cdef double c1 = 1.0 - pow(beta1, <double>t)
    cdef double c2 = 1.0 - pow(beta2, <double>t)
    cdef double g
    with nogil:
        for i in range(n):
            g = grad[i]
            m[i] = beta1 * m[i] + (1.0 - beta1) * g
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
            theta[i] -= lr * (m[i] / c1) / (sqrt(v[i] / c2) + eps)
