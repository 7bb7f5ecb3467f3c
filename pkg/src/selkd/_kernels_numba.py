"""Numba-jitted twins of the kernels in _kernels_numpy.py.

Loops are written row-major so each row stays in cache; fastmath is left off
so results track the numpy path to roundoff. cache=True keeps compilation a
one-time cost per machine.
"""

import numpy as np
from numba import njit

_JIT = {"cache": True, "nogil": True}


@njit(**_JIT)
def log_softmax_fwd(x):
    n, d = x.shape
    out = np.empty((n, d))
    for i in range(n):
        m = x[i, 0]
        for j in range(1, d):
            if x[i, j] > m:
                m = x[i, j]
        acc = 0.0
        for j in range(d):
            acc += np.exp(x[i, j] - m)
        lse = np.log(acc)
        for j in range(d):
            out[i, j] = x[i, j] - m - lse
    return out


@njit(**_JIT)
def log_softmax_bwd(out, g):
    n, d = out.shape
    gx = np.empty((n, d))
    for i in range(n):
        gsum = 0.0
        for j in range(d):
            gsum += g[i, j]
        for j in range(d):
            gx[i, j] = g[i, j] - np.exp(out[i, j]) * gsum
    return gx


@njit(**_JIT)
def softmax_fwd(x):
    n, d = x.shape
    out = np.empty((n, d))
    for i in range(n):
        m = x[i, 0]
        for j in range(1, d):
            if x[i, j] > m:
                m = x[i, j]
        acc = 0.0
        for j in range(d):
            e = np.exp(x[i, j] - m)
            out[i, j] = e
            acc += e
        for j in range(d):
            out[i, j] /= acc
    return out


@njit(**_JIT)
def softmax_bwd(s, g):
    n, d = s.shape
    gx = np.empty((n, d))
    for i in range(n):
        dot = 0.0
        for j in range(d):
            dot += g[i, j] * s[i, j]
        for j in range(d):
            gx[i, j] = s[i, j] * (g[i, j] - dot)
    return gx


@njit(**_JIT)
def layer_norm_fwd(x, gain, bias, eps):
    n, d = x.shape
    y = np.empty((n, d))
    xhat = np.empty((n, d))
    inv_std = np.empty(n)
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            c = x[i, j] - mu
            var += c * c
        var /= d
        r = 1.0 / np.sqrt(var + eps)
        inv_std[i] = r
        for j in range(d):
            h = (x[i, j] - mu) * r
            xhat[i, j] = h
            y[i, j] = h * gain[j] + bias[j]
    return y, xhat, inv_std


@njit(**_JIT)
def layer_norm_bwd(g, xhat, inv_std, gain):
    n, d = g.shape
    gx = np.empty((n, d))
    ggain = np.zeros(d)
    gbias = np.zeros(d)
    for i in range(n):
        mean_g = 0.0
        mean_gx = 0.0
        for j in range(d):
            gh = g[i, j] * gain[j]
            mean_g += gh
            mean_gx += gh * xhat[i, j]
            ggain[j] += g[i, j] * xhat[i, j]
            gbias[j] += g[i, j]
        mean_g /= d
        mean_gx /= d
        for j in range(d):
            gh = g[i, j] * gain[j]
            gx[i, j] = (gh - mean_g - xhat[i, j] * mean_gx) * inv_std[i]
    return gx, ggain, gbias


@njit(**_JIT)
def embedding_scatter_add_(grad_table, ids_flat, g_rows):
    n, d = g_rows.shape
    for i in range(n):
        row = ids_flat[i]
        for j in range(d):
            grad_table[row, j] += g_rows[i, j]


@njit(**_JIT)
def adam_update_(p, g, m, v, lr, beta1, beta2, eps, t):
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for i in range(p.size):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        p[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)
