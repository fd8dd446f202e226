"""Pure-numpy implementations of the hot kernels.

Semantics contract shared with the compiled core in _core.pyx:

* all array arguments are C-contiguous float64 (int64 for index maps)
* reductions over thickness run along axis 1 of a [batch, n, m] block
* argmax ties select the lowest thickness index
* batch norm uses the population variance (ddof=0) and a stabilizer
  added inside the square root

Matrix products are deliberately absent: both backends leave GEMM to
numpy/BLAS, which the Python layer calls directly.
"""

import numpy as np


def sigmoid(x):
    # split by sign so exp() never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_grad(g, y):
    return g * y * (1.0 - y)


def tanh(x):
    return np.tanh(x)


def tanh_grad(g, y):
    return g * (1.0 - y * y)


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(g, x):
    return np.where(x > 0.0, g, 0.0)


def max_reduce(y3):
    """Elementwise max over axis 1 of [b, n, m]; returns (out, argmax)."""
    idx = np.argmax(y3, axis=1)  # first occurrence == lowest index
    out = np.take_along_axis(y3, idx[:, None, :], axis=1)[:, 0, :]
    return np.ascontiguousarray(out), idx


def gather_reduce(y3, idx):
    """Select y3[b, idx[b, j], j] for a given index map."""
    out = np.take_along_axis(y3, idx[:, None, :], axis=1)[:, 0, :]
    return np.ascontiguousarray(out)


def scatter_reduce_grad(g, idx, n):
    """Route g[b, j] to slot idx[b, j] of a zero [b, n, m] block."""
    out = np.zeros((g.shape[0], n, g.shape[1]))
    np.put_along_axis(out, idx[:, None, :], g[:, None, :], axis=1)
    return out


def mean_reduce(y3):
    return y3.mean(axis=1)


def mean_reduce_grad(g, n):
    return np.repeat(g[:, None, :] / n, n, axis=1)


def bn_train(x, eps):
    """Normalize columns by batch mean / population variance.

    Returns (xhat, mean, inv_std) where inv_std = 1/sqrt(var + eps);
    the caller owns the running-statistics update.
    """
    mean = x.mean(axis=0)
    centered = x - mean
    var = np.mean(centered * centered, axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    return centered * inv_std, mean, inv_std


def bn_train_grad(g, xhat, inv_std):
    # full gradient through mean and variance, no affine terms
    b = g.shape[0]
    g_mean = g.mean(axis=0)
    gx_mean = np.mean(g * xhat, axis=0)
    return inv_std * (g - g_mean - xhat * gx_mean)


def bn_eval(x, mean, var, eps):
    return (x - mean) / np.sqrt(var + eps)


def affine_cols(x, scale, shift):
    """Per-feature x * scale + shift over the columns of [b, m]."""
    return x * scale + shift


def affine_cols_grad(g, x, scale):
    """Backward of affine_cols: (dx, dscale, dshift)."""
    return g * scale, np.einsum("bm,bm->m", g, x), g.sum(axis=0)


def adam_update(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """One fused Adam update, in place on p, m and v.

    bc1/bc2 are the bias corrections 1 - beta^t for the current step.
    """
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
