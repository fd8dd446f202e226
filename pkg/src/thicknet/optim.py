"""Optimizers and gradient hygiene: Adam, SGD, global-norm clipping.

Gradients arrive as plain arrays aligned with a (name, Tensor) parameter
list; updates are applied in place. Clipping runs on the concatenated
global L2 norm, after backward and before the optimizer step.
"""

import numpy as np

from .backend import kernels as K
from .errors import ArgumentError, NumericError


class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    def __init__(self, params, lr=2e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for _, p in params]
        self.v = [np.zeros_like(p.data) for _, p in params]


def _check_finite(params, grads):
    for (name, _), g in zip(params, grads):
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")


def adam_step(params, grads, state):
    """Bias-corrected Adam update, in place; returns the params list."""
    _check_finite(params, grads)
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for (_, p), g, m, v in zip(params, grads, state.m, state.v):
        K.adam_update(p.data, g, m, v, state.lr, state.beta1, state.beta2,
                      state.eps, bc1, bc2)
    return params


def sgd_step(params, grads, lr):
    """Plain gradient descent step, in place; returns the params list."""
    _check_finite(params, grads)
    for (_, p), g in zip(params, grads):
        p.data -= lr * g
    return params


def global_norm(grads):
    return float(np.sqrt(sum(float(np.dot(g.reshape(-1), g.reshape(-1))) for g in grads)))


def clip_global_norm(grads, max_norm):
    """Scale all gradients so their joint L2 norm is at most max_norm.

    No-op when the norm is already within bounds, so clipping is
    idempotent and direction-preserving.
    """
    if max_norm <= 0:
        raise ArgumentError(f"max_norm must be positive, got {max_norm}")
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        grads = [g * scale for g in grads]
    return grads
