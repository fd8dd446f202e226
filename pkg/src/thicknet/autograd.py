"""Reverse-mode automatic differentiation on a recording tape.

Tensors are dense row-major float64 arrays. Ops run their numeric work
through the selected kernel backend and, when a Tape is active and an
input participates in differentiation, append a backward rule to the
tape. `Tape.backward` replays the rules once, in reverse recording
order, and returns gradients for every watched leaf.

Subgradient conventions (ties never split):
  * max over thickness routes the upstream gradient to the winning
    slot only, lowest index on ties
  * relu passes gradient only where the input is strictly positive
"""

import itertools
import threading

import numpy as np

from .backend import kernels as K
from .errors import ArgumentError, DimensionError, StateError

_tape_tokens = itertools.count(1)
_tls = threading.local()


def _active_tape():
    return getattr(_tls, "tape", None)


class Tensor:
    """Dense float64 value, optionally tied to a tape node."""

    __slots__ = ("data", "node_id", "requires_grad", "grad", "_token")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 0 and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.node_id = None
        self.requires_grad = requires_grad
        self.grad = None
        self._token = 0

    @property
    def shape(self):
        return self.data.shape

    @property
    def values(self):
        """Flat row-major view of the payload."""
        return self.data.reshape(-1)

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def copy(self):
        t = Tensor(self.data.copy(), requires_grad=self.requires_grad)
        return t

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


class Tape:
    """Ordered record of differentiable ops for one forward pass.

    Node ids increase in recording order, so a single reverse sweep
    is a valid topological traversal.
    """

    def __init__(self):
        self._token = next(_tape_tokens)
        self._records = []  # (out_id, in_ids, backward_fn)
        self._next_id = 0
        self._watched = {}  # node_id -> Tensor

    def __enter__(self):
        if _active_tape() is not None:
            raise StateError("a tape is already active; tapes do not nest")
        _tls.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _tls.tape = None
        return False

    def _on_tape(self, t):
        return t._token == self._token and t.node_id is not None

    def _assign(self, t):
        t.node_id = self._next_id
        t._token = self._token
        self._next_id += 1
        return t.node_id

    def watch(self, t):
        """Register a leaf so backward() reports its gradient (zero if unreachable)."""
        if not self._on_tape(t):
            self._assign(t)
        self._watched[t.node_id] = t
        return t

    def _tracks(self, *tensors):
        return any(self._on_tape(t) or t.requires_grad for t in tensors)

    def _record(self, out, inputs, backward_fn):
        in_ids = []
        for t in inputs:
            if self._on_tape(t):
                in_ids.append(t.node_id)
            elif t.requires_grad:
                self.watch(t)
                in_ids.append(t.node_id)
            else:
                in_ids.append(None)
        out_id = self._assign(out)
        self._records.append((out_id, tuple(in_ids), backward_fn))

    @property
    def num_nodes(self):
        return self._next_id

    def backward(self, loss):
        """Single reverse sweep from a scalar loss.

        Returns {node_id: Tensor} covering every watched leaf; leaves
        the loss cannot reach get zero gradients. Also populates the
        `.grad` attribute of watched tensors.
        """
        if not isinstance(loss, Tensor) or loss.data.size != 1:
            raise ArgumentError(
                f"backward needs a scalar loss, got shape {getattr(loss, 'shape', None)}"
            )
        grads = {}
        borrowed = set()  # ids whose gradient array may be aliased by an op

        def accumulate(idx, arr):
            if idx in grads:
                if idx in borrowed:
                    grads[idx] = grads[idx] + arr
                    borrowed.discard(idx)
                else:
                    grads[idx] += arr
            else:
                grads[idx] = arr
                borrowed.add(idx)

        if self._on_tape(loss):
            grads[loss.node_id] = np.ones_like(loss.data)
            borrowed.discard(loss.node_id)
            for out_id, in_ids, backward_fn in reversed(self._records):
                g = grads.pop(out_id, None)
                if g is None:
                    continue
                for idx, contrib in zip(in_ids, backward_fn(g)):
                    if idx is not None and contrib is not None:
                        accumulate(idx, contrib)

        result = {}
        for node_id, t in self._watched.items():
            g = grads.get(node_id)
            if g is None:
                g = np.zeros_like(t.data)
            gt = Tensor(g)
            t.grad = gt
            result[node_id] = gt
        return result


# ---------------------------------------------------------------------------
# primitive ops


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def matmul(a, b):
    """Matrix product [p,q]@[q] -> [p] or [p,q]@[q,s] -> [p,s]."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim not in (1, 2) or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul got shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    out = Tensor(ad @ bd)
    tape = _active_tape()
    if tape is not None and tape._tracks(a, b):
        if bd.ndim == 1:
            def bwd(g):
                return np.outer(g, bd), g @ ad
        else:
            def bwd(g):
                return g @ bd.T, ad.T @ g
        tape._record(out, (a, b), bwd)
    return out


def linear(x, w, bias=None):
    """Affine map x @ w.T (+ bias) with w of shape [out, in]."""
    x, w = _as_tensor(x), _as_tensor(w)
    if w.data.ndim != 2 or x.data.shape[-1] != w.data.shape[1] or x.data.ndim > 2:
        raise DimensionError(f"linear got input {x.shape} and weight {w.shape}")
    xd = x.data if x.data.ndim == 2 else x.data[None, :]
    y = xd @ w.data.T
    if bias is not None:
        bias = _as_tensor(bias)
        y += bias.data
    out = Tensor(y if x.data.ndim == 2 else y[0])
    tape = _active_tape()
    inputs = (x, w) if bias is None else (x, w, bias)
    if tape is not None and tape._tracks(*inputs):
        wd = w.data
        x_needs = tape._tracks(x)

        def bwd(g):
            g2 = g if g.ndim == 2 else g[None, :]
            dx = None
            if x_needs:
                dx = g2 @ wd
                if x.data.ndim != 2:
                    dx = dx[0]
            dw = g2.T @ xd
            if bias is None:
                return dx, dw
            return dx, dw, g2.sum(axis=0)

        tape._record(out, inputs, bwd)
    return out


def _stack_arrays(vs, op_name):
    if len(vs) == 0:
        raise ArgumentError(f"{op_name} needs at least one input")
    shape = vs[0].shape
    for v in vs:
        if v.shape != shape:
            raise DimensionError(f"{op_name} inputs disagree: {shape} vs {v.shape}")
    flat = np.stack([v.data.reshape(-1) for v in vs])  # [n, L]
    return flat[None, :, :], shape  # kernel layout [1, n, L]


def stack_max(vs):
    """Elementwise max across n same-shaped tensors; lowest index wins ties."""
    vs = [_as_tensor(v) for v in vs]
    y3, shape = _stack_arrays(vs, "stack_max")
    n = len(vs)
    flat, idx = K.max_reduce(y3)
    out = Tensor(flat.reshape(shape))
    tape = _active_tape()
    if tape is not None and tape._tracks(*vs):
        def bwd(g):
            g3 = K.scatter_reduce_grad(g.reshape(1, -1), idx, n)
            return tuple(g3[0, i].reshape(shape) for i in range(n))

        tape._record(out, tuple(vs), bwd)
    return out


def stack_mean(vs):
    """Elementwise mean across n same-shaped tensors."""
    vs = [_as_tensor(v) for v in vs]
    y3, shape = _stack_arrays(vs, "stack_mean")
    n = len(vs)
    out = Tensor(K.mean_reduce(y3).reshape(shape))
    tape = _active_tape()
    if tape is not None and tape._tracks(*vs):
        def bwd(g):
            share = g / n
            return (share,) + tuple(share.copy() for _ in range(n - 1))

        tape._record(out, tuple(vs), bwd)
    return out


def stack_random(vs, rng):
    """Per-element pick of one input, index drawn from rng."""
    vs = [_as_tensor(v) for v in vs]
    y3, shape = _stack_arrays(vs, "stack_random")
    n = len(vs)
    idx = rng.integers(0, n, size=(1, y3.shape[2]), dtype=np.int64)
    out = Tensor(K.gather_reduce(y3, idx).reshape(shape))
    tape = _active_tape()
    if tape is not None and tape._tracks(*vs):
        def bwd(g):
            g3 = K.scatter_reduce_grad(g.reshape(1, -1), idx, n)
            return tuple(g3[0, i].reshape(shape) for i in range(n))

        tape._record(out, tuple(vs), bwd)
    return out


def thick_matmul(x, w, reduction="max", rng=None):
    """n parallel linear maps reduced along the thickness axis.

    x: [batch, r] or [r]; w: [n, m, r] stack of matrices. Computes the n
    products w[i] @ x and reduces elementwise with `reduction` (max,
    mean, or random pick). One fused op so the GEMM runs over all n
    maps at once.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if w.data.ndim != 3 or x.data.ndim not in (1, 2) or x.data.shape[-1] != w.data.shape[2]:
        raise DimensionError(f"thick_matmul got input {x.shape} and weights {w.shape}")
    n, m, r = w.data.shape
    x2 = x.data if x.data.ndim == 2 else x.data[None, :]
    b = x2.shape[0]
    w2 = w.data.reshape(n * m, r)
    y3 = (x2 @ w2.T).reshape(b, n, m)

    idx = None
    if reduction == "max":
        flat, idx = K.max_reduce(y3)
    elif reduction == "mean":
        flat = K.mean_reduce(y3)
    elif reduction == "random":
        if rng is None:
            raise ArgumentError("random reduction needs an rng")
        idx = rng.integers(0, n, size=(b, m), dtype=np.int64)
        flat = K.gather_reduce(y3, idx)
    else:
        raise ArgumentError(f"unknown reduction {reduction!r}")

    out = Tensor(flat if x.data.ndim == 2 else flat[0])
    tape = _active_tape()
    if tape is not None and tape._tracks(x, w):
        x_needs = tape._tracks(x)  # skip the dx GEMM for constant inputs
        w_needs = tape._tracks(w)

        def bwd(g):
            g2 = g if g.ndim == 2 else g[None, :]
            if idx is not None:
                g3 = K.scatter_reduce_grad(g2, idx, n)
            else:
                g3 = K.mean_reduce_grad(g2, n)
            gflat = g3.reshape(b, n * m)
            dw = (gflat.T @ x2).reshape(n, m, r) if w_needs else None
            if not x_needs:
                return None, dw
            dx = gflat @ w2
            return dx if x.data.ndim == 2 else dx[0], dw

        tape._record(out, (x, w), bwd)
    return out


def add(a, b):
    """Elementwise sum; also broadcasts a [m] bias across a [batch, m] operand."""
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.data.shape, b.data.shape
    bias_side = None
    if sa != sb:
        if len(sa) == 2 and sb == (sa[1],):
            bias_side = 1
        elif len(sb) == 2 and sa == (sb[0],):
            bias_side = 0
        else:
            raise DimensionError(f"add got incompatible shapes {sa} and {sb}")
    out = Tensor(a.data + b.data)
    tape = _active_tape()
    if tape is not None and tape._tracks(a, b):
        def bwd(g):
            if bias_side is None:
                return g, g
            if bias_side == 1:
                return g, g.sum(axis=0)
            return g.sum(axis=0), g

        tape._record(out, (a, b), bwd)
    return out


def scale_cols(x, scale):
    """Multiply each column of a [batch, m] tensor by a per-feature scale [m]."""
    x, scale = _as_tensor(x), _as_tensor(scale)
    if x.data.ndim != 2 or scale.data.shape != (x.data.shape[1],):
        raise DimensionError(f"scale_cols got shapes {x.shape} and {scale.shape}")
    xd, sd = x.data, scale.data
    out = Tensor(xd * sd)
    tape = _active_tape()
    if tape is not None and tape._tracks(x, scale):
        def bwd(g):
            return g * sd, np.einsum("bm,bm->m", g, xd)

        tape._record(out, (x, scale), bwd)
    return out


def ewise_mul(a, b):
    """Hadamard product of equal-shaped tensors."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise DimensionError(f"ewise_mul got shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    out = Tensor(ad * bd)
    tape = _active_tape()
    if tape is not None and tape._tracks(a, b):
        def bwd(g):
            return g * bd, g * ad

        tape._record(out, (a, b), bwd)
    return out


def sigmoid(x):
    x = _as_tensor(x)
    y = K.sigmoid(x.data)
    out = Tensor(y)
    tape = _active_tape()
    if tape is not None and tape._tracks(x):
        tape._record(out, (x,), lambda g: (K.sigmoid_grad(g, y),))
    return out


def tanh(x):
    x = _as_tensor(x)
    y = K.tanh(x.data)
    out = Tensor(y)
    tape = _active_tape()
    if tape is not None and tape._tracks(x):
        tape._record(out, (x,), lambda g: (K.tanh_grad(g, y),))
    return out


def relu(x):
    x = _as_tensor(x)
    xd = x.data
    out = Tensor(K.relu(xd))
    tape = _active_tape()
    if tape is not None and tape._tracks(x):
        tape._record(out, (x,), lambda g: (K.relu_grad(g, xd),))
    return out


class BNState:
    """Running statistics for one batch-normalized pre-activation.

    Statistics are shared across timesteps: one (mean, var) pair per
    normalized feature vector, updated by exponential moving average in
    train mode. The first train-mode call seeds the running values with
    that batch's statistics so short runs still get usable eval stats.
    """

    def __init__(self, num_features, eps=1e-5, momentum=0.1):
        self.num_features = num_features
        self.eps = eps
        self.momentum = momentum
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)
        self.num_updates = 0

    def update(self, mean, var):
        if self.num_updates == 0:
            self.running_mean = mean.copy()
            self.running_var = var.copy()
        else:
            m = self.momentum
            self.running_mean = (1.0 - m) * self.running_mean + m * mean
            self.running_var = (1.0 - m) * self.running_var + m * var
        self.num_updates += 1


def batch_norm(x, state, mode="train"):
    """Per-feature batch normalization without learnable affine.

    Train mode normalizes by the batch mean and population variance
    (stabilizer under the square root) and updates the running
    statistics; eval mode normalizes by the running statistics and
    requires at least one prior train-mode call.
    """
    x = _as_tensor(x)
    if x.data.ndim != 2 or x.data.shape[1] != state.num_features:
        raise DimensionError(
            f"batch_norm expects [batch, {state.num_features}], got {x.shape}"
        )
    if x.data.shape[0] < 1:
        raise DimensionError("batch_norm needs batch >= 1")
    tape = _active_tape()
    if mode == "train":
        xhat, mean, inv_std = K.bn_train(x.data, state.eps)
        var = 1.0 / (inv_std * inv_std) - state.eps
        state.update(mean, var)
        out = Tensor(xhat)
        if tape is not None and tape._tracks(x):
            tape._record(out, (x,), lambda g: (K.bn_train_grad(g, xhat, inv_std),))
        return out
    if mode == "eval":
        if state.num_updates == 0:
            raise StateError("batch_norm eval mode before any train-mode call")
        out = Tensor(K.bn_eval(x.data, state.running_mean, state.running_var, state.eps))
        if tape is not None and tape._tracks(x):
            scale = 1.0 / np.sqrt(state.running_var + state.eps)
            tape._record(out, (x,), lambda g: (g * scale,))
        return out
    raise ArgumentError(f"batch_norm mode must be train or eval, got {mode!r}")


def batch_norm_affine(x, state, scale, shift, mode="train"):
    """batch_norm followed by a per-feature scale and shift, as one op.

    Semantically identical to add(scale_cols(batch_norm(x, state, mode),
    scale), shift); fused because the recurrent cells hit this sequence
    four times per timestep.
    """
    x, scale, shift = _as_tensor(x), _as_tensor(scale), _as_tensor(shift)
    if x.data.ndim != 2 or x.data.shape[1] != state.num_features:
        raise DimensionError(
            f"batch_norm_affine expects [batch, {state.num_features}], got {x.shape}"
        )
    if scale.data.shape != (state.num_features,) or shift.data.shape != (state.num_features,):
        raise DimensionError(
            f"scale/shift must be [{state.num_features}], got {scale.shape}/{shift.shape}"
        )
    tape = _active_tape()
    sd, td = scale.data, shift.data
    if mode == "train":
        xhat, mean, inv_std = K.bn_train(x.data, state.eps)
        var = 1.0 / (inv_std * inv_std) - state.eps
        state.update(mean, var)
        out = Tensor(K.affine_cols(xhat, sd, td))
        if tape is not None and tape._tracks(x, scale, shift):
            def bwd(g):
                g_hat, dscale, dshift = K.affine_cols_grad(g, xhat, sd)
                return K.bn_train_grad(g_hat, xhat, inv_std), dscale, dshift

            tape._record(out, (x, scale, shift), bwd)
        return out
    if mode == "eval":
        if state.num_updates == 0:
            raise StateError("batch_norm_affine eval mode before any train-mode call")
        inv_run = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x.data - state.running_mean) * inv_run
        out = Tensor(K.affine_cols(xhat, sd, td))
        if tape is not None and tape._tracks(x, scale, shift):
            def bwd(g):
                g_hat, dscale, dshift = K.affine_cols_grad(g, xhat, sd)
                return g_hat * inv_run, dscale, dshift

            tape._record(out, (x, scale, shift), bwd)
        return out
    raise ArgumentError(f"batch_norm_affine mode must be train or eval, got {mode!r}")


def elem_sum(x):
    """Sum of all elements, as a scalar tensor."""
    x = _as_tensor(x)
    shape = x.data.shape
    out = Tensor(x.data.sum())
    tape = _active_tape()
    if tape is not None and tape._tracks(x):
        tape._record(out, (x,), lambda g: (np.full(shape, float(g)),))
    return out


def slice_cols(x, start, stop):
    """Column slice of a [batch, w] tensor, differentiable."""
    x = _as_tensor(x)
    if x.data.ndim != 2 or not (0 <= start < stop <= x.data.shape[1]):
        raise DimensionError(f"slice_cols({start}, {stop}) invalid for shape {x.shape}")
    out = Tensor(x.data[:, start:stop].copy())
    tape = _active_tape()
    if tape is not None and tape._tracks(x):
        shape = x.data.shape

        def bwd(g):
            full = np.zeros(shape)
            full[:, start:stop] = g
            return (full,)

        tape._record(out, (x,), bwd)
    return out


def mse_loss(pred, target):
    """Mean of squared differences over all elements."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise DimensionError(f"mse_loss got shapes {pred.shape} and {target.shape}")
    diff = pred.data - target.data
    out = Tensor(np.mean(diff * diff))
    tape = _active_tape()
    if tape is not None and tape._tracks(pred, target):
        scale = 2.0 / diff.size

        def bwd(g):
            gd = float(g) * scale * diff
            return gd, -gd

        tape._record(out, (pred, target), bwd)
    return out


def softmax_cross_entropy(logits, labels):
    """Mean negative log softmax probability of the true class.

    labels is an integer array in [0, C); stabilized by max subtraction.
    """
    logits = _as_tensor(logits)
    if logits.data.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy expects [batch, C], got {logits.shape}")
    labels = np.asarray(labels)
    b, c = logits.data.shape
    if labels.shape != (b,):
        raise DimensionError(f"labels shape {labels.shape} does not match batch {b}")
    if labels.min() < 0 or labels.max() >= c:
        raise ArgumentError(f"labels must lie in [0, {c})")
    labels = labels.astype(np.int64)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    sez = ez.sum(axis=1, keepdims=True)
    log_probs = z - np.log(sez)
    out = Tensor(-np.mean(log_probs[np.arange(b), labels]))
    tape = _active_tape()
    if tape is not None and tape._tracks(logits):
        probs = ez / sez

        def bwd(g):
            d = probs.copy()
            d[np.arange(b), labels] -= 1.0
            d *= float(g) / b
            return (d,)

        tape._record(out, (logits,), bwd)
    return out
