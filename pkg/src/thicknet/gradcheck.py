"""Finite-difference validation of every differentiable op and the full cell.

Each check rebuilds its forward pass from a flat parameter vector so the
central-difference oracle can probe it coordinate by coordinate. Inputs
near subgradient kinks are rejected up front: max reductions need a gap
above 1e-3 between the top two thickness candidates, and relu inputs
must sit at least 1e-3 from zero, otherwise the two-sided difference
straddles the kink and measures nothing.
"""

import time

import numpy as np

from . import autograd as ag
from . import oracle
from .autograd import Tape, Tensor
from .layers import GATES, LSTMCell, ThickLSTMCell

FD_STEP = 1e-5


def _tape_gradient(loss_fn, params):
    """Analytic gradient of loss_fn w.r.t. params, flattened in order."""
    tape = Tape()
    for p in params:
        tape.watch(p)
    with tape:
        loss = loss_fn()
    tape.backward(loss)
    return np.concatenate([p.grad.data.reshape(-1) for p in params])


def _fd_gradient(loss_fn, params):
    """Finite-difference gradient via the scalar oracle, flattened in order."""
    sizes = [p.data.size for p in params]
    flat0 = np.concatenate([p.data.reshape(-1) for p in params])

    def f(flat):
        offset = 0
        for p, size in zip(params, sizes):
            p.data[...] = np.asarray(flat[offset:offset + size]).reshape(p.data.shape)
            offset += size
        return float(loss_fn().data)

    try:
        return np.array(oracle.fd_gradient(f, flat0.tolist(), h=FD_STEP))
    finally:
        f(flat0)  # restore


def _compare(loss_fn, params):
    analytic = _tape_gradient(loss_fn, params)
    numeric = _fd_gradient(loss_fn, params)
    return oracle.max_rel_err(analytic.tolist(), numeric.tolist())


def _sample_away_from_zero(rng, shape, margin=1e-2):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, margin * np.sign(x) + (x == 0) * margin, x)


def _min_stack_gap(stacked):
    """Gap between top-2 values along axis 0 of [n, ...]."""
    if stacked.shape[0] == 1:
        return np.inf
    part = np.sort(stacked, axis=0)
    return float(np.min(part[-1] - part[-2]))


def check_matmul():
    rng = np.random.default_rng(101)
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    v = Tensor(rng.standard_normal(4), requires_grad=True)
    err_mm = _compare(lambda: ag.elem_sum(ag.ewise_mul(ag.matmul(a, b), ag.matmul(a, b))), [a, b])
    err_mv = _compare(lambda: ag.elem_sum(ag.matmul(a, v)), [a, v])
    return max(err_mm, err_mv)


def check_linear():
    rng = np.random.default_rng(102)
    x = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
    w = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    b = Tensor(rng.standard_normal(2), requires_grad=True)
    return _compare(lambda: ag.mse_loss(ag.linear(x, w, b), Tensor(np.zeros((5, 2)))), [x, w, b])


def check_add_mul():
    rng = np.random.default_rng(103)
    a = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    b = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    bias = Tensor(rng.standard_normal(3), requires_grad=True)
    scale = Tensor(rng.standard_normal(3), requires_grad=True)
    err1 = _compare(lambda: ag.elem_sum(ag.ewise_mul(ag.add(a, b), a)), [a, b])
    err2 = _compare(lambda: ag.elem_sum(ag.ewise_mul(ag.add(a, bias), ag.add(a, bias))), [a, bias])
    err3 = _compare(lambda: ag.elem_sum(ag.ewise_mul(ag.scale_cols(a, scale), a)), [a, scale])
    return max(err1, err2, err3)


def check_activations():
    rng = np.random.default_rng(104)
    x = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
    xr = Tensor(_sample_away_from_zero(rng, (4, 5)), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 5)))
    errs = [
        _compare(lambda: ag.elem_sum(ag.ewise_mul(ag.sigmoid(x), w)), [x]),
        _compare(lambda: ag.elem_sum(ag.ewise_mul(ag.tanh(x), w)), [x]),
        _compare(lambda: ag.elem_sum(ag.ewise_mul(ag.relu(xr), w)), [xr]),
    ]
    return max(errs)


def check_stack_ops():
    rng = np.random.default_rng(105)
    while True:
        vs = [Tensor(rng.standard_normal((3, 4)), requires_grad=True) for _ in range(3)]
        if _min_stack_gap(np.stack([v.data for v in vs])) > 1e-3:
            break
    w = Tensor(rng.standard_normal((3, 4)))
    errs = [
        _compare(lambda: ag.elem_sum(ag.ewise_mul(ag.stack_max(vs), w)), vs),
        _compare(lambda: ag.elem_sum(ag.ewise_mul(ag.stack_mean(vs), w)), vs),
        _compare(
            lambda: ag.elem_sum(
                ag.ewise_mul(ag.stack_random(vs, np.random.default_rng(9)), w)
            ),
            vs,
        ),
    ]
    return max(errs)


def check_thick_matmul():
    rng = np.random.default_rng(106)
    while True:
        x = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
        w = Tensor(rng.standard_normal((3, 5, 3)), requires_grad=True)
        y3 = np.einsum("nmr,br->nbm", w.data, x.data)
        if _min_stack_gap(y3) > 1e-3:
            break
    ref = Tensor(rng.standard_normal((4, 5)))
    errs = [
        _compare(lambda: ag.mse_loss(ag.thick_matmul(x, w, "max"), ref), [x, w]),
        _compare(lambda: ag.mse_loss(ag.thick_matmul(x, w, "mean"), ref), [x, w]),
        _compare(
            lambda: ag.mse_loss(
                ag.thick_matmul(x, w, "random", np.random.default_rng(11)), ref
            ),
            [x, w],
        ),
    ]
    return max(errs)


def check_batch_norm():
    rng = np.random.default_rng(107)
    x = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 3)))

    def loss_train():
        state = ag.BNState(3)
        return ag.elem_sum(ag.ewise_mul(ag.batch_norm(x, state, "train"), w))

    state_eval = ag.BNState(3)
    ag.batch_norm(Tensor(rng.standard_normal((6, 3))), state_eval, "train")

    def loss_eval():
        return ag.elem_sum(ag.ewise_mul(ag.batch_norm(x, state_eval, "eval"), w))

    return max(_compare(loss_train, [x]), _compare(loss_eval, [x]))


def check_batch_norm_affine():
    rng = np.random.default_rng(109)
    x = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
    scale = Tensor(rng.uniform(0.2, 1.5, 3), requires_grad=True)
    shift = Tensor(rng.standard_normal(3), requires_grad=True)
    w = Tensor(rng.standard_normal((5, 3)))

    def loss_train():
        state = ag.BNState(3)
        return ag.elem_sum(
            ag.ewise_mul(ag.batch_norm_affine(x, state, scale, shift, "train"), w)
        )

    state_eval = ag.BNState(3)
    ag.batch_norm(Tensor(rng.standard_normal((8, 3))), state_eval, "train")

    def loss_eval():
        return ag.elem_sum(
            ag.ewise_mul(ag.batch_norm_affine(x, state_eval, scale, shift, "eval"), w)
        )

    params = [x, scale, shift]
    return max(_compare(loss_train, params), _compare(loss_eval, params))


def check_losses():
    rng = np.random.default_rng(108)
    pred = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    target = Tensor(rng.standard_normal((4, 3)))
    logits = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
    labels = np.array([0, 3, 1, 2, 2])
    errs = [
        _compare(lambda: ag.mse_loss(pred, target), [pred]),
        _compare(lambda: ag.softmax_cross_entropy(logits, labels), [logits]),
        _compare(lambda: ag.elem_sum(ag.slice_cols(pred, 1, 3)), [pred]),
    ]
    return max(errs)


def _fresh_thick_cell(seed, identity_bn=False):
    rng = np.random.default_rng(seed)
    cell = ThickLSTMCell(2, 3, 2, "max", rng, identity_bn=identity_bn)
    x = rng.standard_normal((4, 2))
    h = rng.standard_normal((4, 3))
    c = rng.standard_normal((4, 3))
    return cell, x, h, c


def _thick_cell_clear_of_kinks(cell, x, h):
    spec = oracle.ScalarThickCell(
        wh={g: oracle.ScalarThickLinear([w.tolist() for w in cell.wh[g].weights]) for g in GATES},
        wx={g: oracle.ScalarThickLinear([w.tolist() for w in cell.wx[g].weights]) for g in GATES},
        bias={g: cell.bias[g].data.tolist() for g in GATES},
        scale={g: cell.scale[g].data.tolist() for g in GATES},
        identity_bn=cell.identity_bn,
    )
    gap, relu_margin = oracle.oracle_thick_lstm_gap(spec, x.tolist(), h.tolist())
    return gap > 1e-3 and relu_margin > 1e-3


def check_thick_cell():
    """Full cell: every parameter against central differences."""
    seed = 200
    while True:
        cell, x, h, c = _fresh_thick_cell(seed)
        if _thick_cell_clear_of_kinks(cell, x, h):
            break
        seed += 1
    xt, ht, ct = Tensor(x), Tensor(h), Tensor(c)
    target = Tensor(np.random.default_rng(3).standard_normal((4, 3)))
    params = [p for _, p in cell.parameters()]

    def loss_fn():
        for g in GATES:
            cell.bn[g] = ag.BNState(3)  # keep running stats out of the function
        h_new, c_new = cell.step(xt, ht, ct, mode="train")
        return ag.add(ag.mse_loss(h_new, target), ag.elem_sum(c_new))

    return _compare(loss_fn, params)


def check_lstm_cell():
    rng = np.random.default_rng(300)
    cell = LSTMCell(2, 3, rng)
    xt = Tensor(rng.standard_normal((4, 2)))
    ht = Tensor(rng.standard_normal((4, 3)))
    ct = Tensor(rng.standard_normal((4, 3)))
    target = Tensor(rng.standard_normal((4, 3)))
    params = [p for _, p in cell.parameters()]

    def loss_fn():
        h_new, c_new = cell.step(xt, ht, ct)
        return ag.add(ag.mse_loss(h_new, target), ag.elem_sum(c_new))

    return _compare(loss_fn, params)


ALL_CHECKS = [
    ("matmul", check_matmul, 1e-6),
    ("linear", check_linear, 1e-4),
    ("add_ewise_mul", check_add_mul, 1e-4),
    ("activations", check_activations, 1e-4),
    ("stack_reductions", check_stack_ops, 1e-4),
    ("thick_matmul", check_thick_matmul, 1e-4),
    ("batch_norm", check_batch_norm, 1e-5),
    ("batch_norm_affine", check_batch_norm_affine, 1e-4),
    ("losses", check_losses, 1e-4),
    ("thick_lstm_cell", check_thick_cell, 1e-4),
    ("lstm_cell", check_lstm_cell, 1e-4),
]


def run_all(verbose=True):
    """Run every check; returns a list of (name, err, tol, passed, seconds)."""
    results = []
    for name, fn, tol in ALL_CHECKS:
        start = time.perf_counter()
        err = fn()
        elapsed = time.perf_counter() - start
        passed = err < tol
        results.append((name, err, tol, passed, elapsed))
        if verbose:
            status = "ok" if passed else "FAIL"
            print(f"gradcheck {name:<18} rel_err={err:.3e} tol={tol:.0e} "
                  f"[{status}] ({elapsed:.2f}s)")
    return results
