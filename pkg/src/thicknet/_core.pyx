# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels for the per-timestep hot path.

Mirrors the semantics contract documented in _kernels_py.py. Loops are
single-threaded with a fixed reduction order so results are bit-stable
run to run. GEMM stays with numpy/BLAS at the Python layer.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp as c_exp, sqrt as c_sqrt

cnp.import_array()


def sigmoid(cnp.ndarray x):
    cdef cnp.ndarray out = np.empty_like(x)
    cdef double[::1] xf = x.ravel()
    cdef double[::1] of = out.ravel()
    cdef Py_ssize_t i, size = xf.shape[0]
    cdef double v, e
    for i in range(size):
        v = xf[i]
        if v >= 0.0:
            of[i] = 1.0 / (1.0 + c_exp(-v))
        else:
            e = c_exp(v)
            of[i] = e / (1.0 + e)
    return out


def sigmoid_grad(cnp.ndarray g, cnp.ndarray y):
    cdef cnp.ndarray out = np.empty_like(g)
    cdef double[::1] gf = g.ravel()
    cdef double[::1] yf = y.ravel()
    cdef double[::1] of = out.ravel()
    cdef Py_ssize_t i, size = gf.shape[0]
    for i in range(size):
        of[i] = gf[i] * yf[i] * (1.0 - yf[i])
    return out


def tanh(cnp.ndarray x):
    # numpy's vectorized tanh outruns a scalar libm loop; keep it
    return np.tanh(x)


def tanh_grad(cnp.ndarray g, cnp.ndarray y):
    cdef cnp.ndarray out = np.empty_like(g)
    cdef double[::1] gf = g.ravel()
    cdef double[::1] yf = y.ravel()
    cdef double[::1] of = out.ravel()
    cdef Py_ssize_t i, size = gf.shape[0]
    for i in range(size):
        of[i] = gf[i] * (1.0 - yf[i] * yf[i])
    return out


def relu(cnp.ndarray x):
    cdef cnp.ndarray out = np.empty_like(x)
    cdef double[::1] xf = x.ravel()
    cdef double[::1] of = out.ravel()
    cdef Py_ssize_t i, size = xf.shape[0]
    for i in range(size):
        of[i] = xf[i] if xf[i] > 0.0 else 0.0
    return out


def relu_grad(cnp.ndarray g, cnp.ndarray x):
    cdef cnp.ndarray out = np.empty_like(g)
    cdef double[::1] gf = g.ravel()
    cdef double[::1] xf = x.ravel()
    cdef double[::1] of = out.ravel()
    cdef Py_ssize_t i, size = gf.shape[0]
    for i in range(size):
        of[i] = gf[i] if xf[i] > 0.0 else 0.0
    return out


def max_reduce(cnp.ndarray y3):
    """Elementwise max over axis 1 of [b, n, m]; ties pick the lowest index."""
    cdef Py_ssize_t b = y3.shape[0], n = y3.shape[1], m = y3.shape[2]
    cdef cnp.ndarray out = np.empty((b, m))
    cdef cnp.ndarray idx = np.empty((b, m), dtype=np.int64)
    cdef double[:, :, ::1] yv = y3
    cdef double[:, ::1] ov = out
    cdef long long[:, ::1] iv = idx
    cdef Py_ssize_t i, j, k, best_k
    cdef double best, v
    for i in range(b):
        for j in range(m):
            best = yv[i, 0, j]
            best_k = 0
            for k in range(1, n):
                v = yv[i, k, j]
                if v > best:
                    best = v
                    best_k = k
            ov[i, j] = best
            iv[i, j] = best_k
    return out, idx


def gather_reduce(cnp.ndarray y3, cnp.ndarray idx):
    cdef Py_ssize_t b = y3.shape[0], m = y3.shape[2]
    cdef cnp.ndarray out = np.empty((b, m))
    cdef double[:, :, ::1] yv = y3
    cdef long long[:, ::1] iv = idx
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j
    for i in range(b):
        for j in range(m):
            ov[i, j] = yv[i, iv[i, j], j]
    return out


def scatter_reduce_grad(cnp.ndarray g, cnp.ndarray idx, Py_ssize_t n):
    cdef Py_ssize_t b = g.shape[0], m = g.shape[1]
    cdef cnp.ndarray out = np.zeros((b, n, m))
    cdef double[:, ::1] gv = g
    cdef long long[:, ::1] iv = idx
    cdef double[:, :, ::1] ov = out
    cdef Py_ssize_t i, j
    for i in range(b):
        for j in range(m):
            ov[i, iv[i, j], j] = gv[i, j]
    return out


def mean_reduce(cnp.ndarray y3):
    cdef Py_ssize_t b = y3.shape[0], n = y3.shape[1], m = y3.shape[2]
    cdef cnp.ndarray out = np.zeros((b, m))
    cdef double[:, :, ::1] yv = y3
    cdef double[:, ::1] ov = out
    cdef double inv_n = 1.0 / n
    cdef Py_ssize_t i, j, k
    for i in range(b):
        for k in range(n):
            for j in range(m):
                ov[i, j] += yv[i, k, j]
        for j in range(m):
            ov[i, j] *= inv_n
    return out


def mean_reduce_grad(cnp.ndarray g, Py_ssize_t n):
    cdef Py_ssize_t b = g.shape[0], m = g.shape[1]
    cdef cnp.ndarray out = np.empty((b, n, m))
    cdef double[:, ::1] gv = g
    cdef double[:, :, ::1] ov = out
    cdef double inv_n = 1.0 / n
    cdef Py_ssize_t i, j, k
    for i in range(b):
        for k in range(n):
            for j in range(m):
                ov[i, k, j] = gv[i, j] * inv_n
    return out


def bn_train(cnp.ndarray x, double eps):
    cdef Py_ssize_t b = x.shape[0], m = x.shape[1]
    cdef cnp.ndarray xhat = np.empty((b, m))
    cdef cnp.ndarray mean = np.zeros(m)
    cdef cnp.ndarray inv_std = np.zeros(m)
    cdef double[:, ::1] xv = x
    cdef double[:, ::1] hv = xhat
    cdef double[::1] mv = mean
    cdef double[::1] sv = inv_std
    cdef Py_ssize_t i, j
    cdef double inv_b = 1.0 / b
    cdef double d
    for i in range(b):
        for j in range(m):
            mv[j] += xv[i, j]
    for j in range(m):
        mv[j] *= inv_b
    for i in range(b):
        for j in range(m):
            d = xv[i, j] - mv[j]
            sv[j] += d * d
    for j in range(m):
        sv[j] = 1.0 / c_sqrt(sv[j] * inv_b + eps)
    for i in range(b):
        for j in range(m):
            hv[i, j] = (xv[i, j] - mv[j]) * sv[j]
    return xhat, mean, inv_std


def bn_train_grad(cnp.ndarray g, cnp.ndarray xhat, cnp.ndarray inv_std):
    cdef Py_ssize_t b = g.shape[0], m = g.shape[1]
    cdef cnp.ndarray out = np.empty((b, m))
    cdef double[:, ::1] gv = g
    cdef double[:, ::1] hv = xhat
    cdef double[::1] sv = inv_std
    cdef double[:, ::1] ov = out
    cdef cnp.ndarray gm = np.zeros(m)
    cdef cnp.ndarray gxm = np.zeros(m)
    cdef double[::1] gmv = gm
    cdef double[::1] gxv = gxm
    cdef double inv_b = 1.0 / b
    cdef Py_ssize_t i, j
    for i in range(b):
        for j in range(m):
            gmv[j] += gv[i, j]
            gxv[j] += gv[i, j] * hv[i, j]
    for j in range(m):
        gmv[j] *= inv_b
        gxv[j] *= inv_b
    for i in range(b):
        for j in range(m):
            ov[i, j] = sv[j] * (gv[i, j] - gmv[j] - hv[i, j] * gxv[j])
    return out


def bn_eval(cnp.ndarray x, cnp.ndarray mean, cnp.ndarray var, double eps):
    cdef Py_ssize_t b = x.shape[0], m = x.shape[1]
    cdef cnp.ndarray out = np.empty((b, m))
    cdef double[:, ::1] xv = x
    cdef double[::1] mv = mean
    cdef double[::1] vv = var
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j
    cdef double s
    for j in range(m):
        s = 1.0 / c_sqrt(vv[j] + eps)
        for i in range(b):
            ov[i, j] = (xv[i, j] - mv[j]) * s
    return out


def affine_cols(cnp.ndarray x, cnp.ndarray scale, cnp.ndarray shift):
    cdef Py_ssize_t b = x.shape[0], m = x.shape[1]
    cdef cnp.ndarray out = np.empty((b, m))
    cdef double[:, ::1] xv = x
    cdef double[::1] sv = scale
    cdef double[::1] tv = shift
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j
    for i in range(b):
        for j in range(m):
            ov[i, j] = xv[i, j] * sv[j] + tv[j]
    return out


def affine_cols_grad(cnp.ndarray g, cnp.ndarray x, cnp.ndarray scale):
    cdef Py_ssize_t b = g.shape[0], m = g.shape[1]
    cdef cnp.ndarray gx = np.empty((b, m))
    cdef cnp.ndarray dscale = np.zeros(m)
    cdef cnp.ndarray dshift = np.zeros(m)
    cdef double[:, ::1] gv = g
    cdef double[:, ::1] xv = x
    cdef double[::1] sv = scale
    cdef double[:, ::1] gxv = gx
    cdef double[::1] dsv = dscale
    cdef double[::1] dtv = dshift
    cdef Py_ssize_t i, j
    for i in range(b):
        for j in range(m):
            gxv[i, j] = gv[i, j] * sv[j]
            dsv[j] += gv[i, j] * xv[i, j]
            dtv[j] += gv[i, j]
    return gx, dscale, dshift


def adam_update(cnp.ndarray p, cnp.ndarray g, cnp.ndarray m, cnp.ndarray v,
                double lr, double beta1, double beta2, double eps,
                double bc1, double bc2):
    cdef double[::1] pf = p.ravel()
    cdef double[::1] gf = g.ravel()
    cdef double[::1] mf = m.ravel()
    cdef double[::1] vf = v.ravel()
    cdef Py_ssize_t i, size = pf.shape[0]
    cdef double gi, mh, vh
    for i in range(size):
        gi = gf[i]
        mf[i] = beta1 * mf[i] + (1.0 - beta1) * gi
        vf[i] = beta2 * vf[i] + (1.0 - beta2) * gi * gi
        mh = mf[i] / bc1
        vh = vf[i] / bc2
        pf[i] -= lr * mh / (c_sqrt(vh) + eps)
    return None
