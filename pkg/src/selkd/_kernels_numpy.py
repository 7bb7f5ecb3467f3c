"""Pure-numpy reference kernels.

These are the fallback implementations behind the backend switch; the numba
twins in _kernels_numba.py must match them to floating-point roundoff.
All row kernels take 2-D float64 arrays (rows x width) and return new arrays,
except the in-place scatter/update kernels which say so in their name.
"""

import numpy as np


def log_softmax_fwd(x):
    m = x.max(axis=1, keepdims=True)
    s = x - m
    lse = np.log(np.exp(s).sum(axis=1, keepdims=True))
    return s - lse


def log_softmax_bwd(out, g):
    return g - np.exp(out) * g.sum(axis=1, keepdims=True)


def softmax_fwd(x):
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd(s, g):
    return s * (g - (g * s).sum(axis=1, keepdims=True))


def layer_norm_fwd(x, gain, bias, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    return xhat * gain + bias, xhat, inv_std[:, 0]


def layer_norm_bwd(g, xhat, inv_std, gain):
    d = xhat.shape[1]
    gxhat = g * gain
    # dL/dx for y = xhat*gain + bias with xhat = (x-mu)/sqrt(var+eps)
    mean_g = gxhat.mean(axis=1, keepdims=True)
    mean_gx = (gxhat * xhat).mean(axis=1, keepdims=True)
    gx = (gxhat - mean_g - xhat * mean_gx) * inv_std[:, None]
    ggain = (g * xhat).sum(axis=0)
    gbias = g.sum(axis=0)
    return gx, ggain, gbias


def embedding_scatter_add_(grad_table, ids_flat, g_rows):
    """Accumulate g_rows[i] into grad_table[ids_flat[i]] in place."""
    np.add.at(grad_table, ids_flat, g_rows)


def adam_update_(p, g, m, v, lr, beta1, beta2, eps, t):
    """Bias-corrected Adam step on flat float64 views, in place."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)
