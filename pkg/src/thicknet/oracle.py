"""Scalar-loop reference implementations and a finite-difference oracle.

Everything here is deliberately slow, pure Python over nested lists,
and imports nothing from the autodiff core or the kernel backends, so
it provides an independent arithmetic path for pinning the vectorized
library. Only the math module is used for the elementary functions.
"""

import math
from dataclasses import dataclass, field


def _sigmoid(v):
    if v >= 0.0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


def _relu(v):
    return v if v > 0.0 else 0.0


@dataclass
class ScalarThickLinear:
    """Plain-list mirror of a ThickLinear layer: n matrices of shape m x r."""

    weights: list  # [n][m][r]
    reduction: str = "max"

    @property
    def thickness(self):
        return len(self.weights)

    @property
    def out_dim(self):
        return len(self.weights[0])

    @property
    def in_dim(self):
        return len(self.weights[0][0])


@dataclass
class ScalarThickCell:
    """Plain-list mirror of a ThickLSTMCell (gate order i, f, o, g)."""

    wh: dict  # gate -> ScalarThickLinear over the hidden stream (m x m)
    wx: dict  # gate -> ScalarThickLinear over the input stream (m x r)
    bias: dict  # gate -> [m]
    scale: dict = None  # gate -> [m] post-normalization scale; None = all ones
    eps: float = 1e-5
    identity_bn: bool = False
    gates: tuple = field(default=("i", "f", "o", "g"))

    def scale_for(self, gate, m):
        return self.scale[gate] if self.scale is not None else [1.0] * m


def oracle_thick_linear(spec, x):
    """Triple-loop transcription of the max-reduced stack of linear maps.

    out[j] = reduce_i sum_k w[i][j][k] * x[k], ties to the lowest i.
    Returns the output list; mean reduction averages instead.
    """
    n, m, r = spec.thickness, spec.out_dim, spec.in_dim
    out = []
    for j in range(m):
        candidates = []
        for i in range(n):
            acc = 0.0
            for k in range(r):
                acc += spec.weights[i][j][k] * x[k]
            candidates.append(acc)
        if spec.reduction == "mean":
            out.append(sum(candidates) / n)
        else:
            best = candidates[0]
            for v in candidates[1:]:  # strict > keeps the lowest index on ties
                if v > best:
                    best = v
            out.append(best)
    return out


def oracle_thick_linear_gap(spec, x):
    """Smallest gap between the top two thickness candidates over all nodes.

    Infinite for thickness 1. Used to reject near-tie inputs before
    finite-difference checks.
    """
    n, m, r = spec.thickness, spec.out_dim, spec.in_dim
    if n == 1:
        return math.inf
    gap = math.inf
    for j in range(m):
        candidates = sorted(
            (sum(spec.weights[i][j][k] * x[k] for k in range(r)) for i in range(n)),
            reverse=True,
        )
        gap = min(gap, candidates[0] - candidates[1])
    return gap


def _batch_norm_columns(rows, eps):
    """Explicit batch-statistics normalization of a list of rows."""
    b = len(rows)
    m = len(rows[0])
    out = [[0.0] * m for _ in range(b)]
    for j in range(m):
        mean = sum(rows[i][j] for i in range(b)) / b
        var = sum((rows[i][j] - mean) ** 2 for i in range(b)) / b
        scale = 1.0 / math.sqrt(var + eps)
        for i in range(b):
            out[i][j] = (rows[i][j] - mean) * scale
    return out


def oracle_thick_lstm_step(cell, x_rows, h_rows, c_rows):
    """Loop-transcribed thick LSTM step over a batch of rows.

    Pre-activation per gate: max-stack over h plus max-stack over x,
    batch-normalized with explicit batch statistics, then the learnable
    scale and the gate bias (both after normalization, where they
    survive the mean subtraction); candidate gate uses relu, all other
    gates sigmoid. Returns (h_new, c_new) as lists of rows.
    """
    b = len(x_rows)
    m = cell.wh["i"].out_dim
    pre = {}
    for gate in cell.gates:
        rows = []
        for i in range(b):
            ph = oracle_thick_linear(cell.wh[gate], h_rows[i])
            px = oracle_thick_linear(cell.wx[gate], x_rows[i])
            rows.append([ph[j] + px[j] for j in range(m)])
        if cell.identity_bn:
            pre[gate] = [
                [rows[i][j] + cell.bias[gate][j] for j in range(m)] for i in range(b)
            ]
        else:
            rows = _batch_norm_columns(rows, cell.eps)
            gamma = cell.scale_for(gate, m)
            pre[gate] = [
                [rows[i][j] * gamma[j] + cell.bias[gate][j] for j in range(m)]
                for i in range(b)
            ]

    h_new, c_new = [], []
    for i in range(b):
        c_row, h_row = [], []
        for j in range(m):
            f = _sigmoid(pre["f"][i][j])
            ig = _sigmoid(pre["i"][i][j])
            g = _relu(pre["g"][i][j])
            o = _sigmoid(pre["o"][i][j])
            c = f * c_rows[i][j] + ig * g
            c_row.append(c)
            h_row.append(o * math.tanh(c))
        c_new.append(c_row)
        h_new.append(h_row)
    return h_new, c_new


def oracle_thick_lstm_gap(cell, x_rows, h_rows):
    """Diagnostics for tie rejection: (min max-stack gap, min |relu input|).

    The relu inputs are the batch-normalized candidate pre-activations
    plus the candidate bias, recomputed here with explicit statistics.
    """
    b = len(x_rows)
    m = cell.wh["i"].out_dim
    gap = math.inf
    for gate in cell.gates:
        for i in range(b):
            gap = min(gap, oracle_thick_linear_gap(cell.wh[gate], h_rows[i]))
            gap = min(gap, oracle_thick_linear_gap(cell.wx[gate], x_rows[i]))
    rows = []
    for i in range(b):
        ph = oracle_thick_linear(cell.wh["g"], h_rows[i])
        px = oracle_thick_linear(cell.wx["g"], x_rows[i])
        rows.append([ph[j] + px[j] for j in range(m)])
    gamma = [1.0] * m
    if not cell.identity_bn:
        rows = _batch_norm_columns(rows, cell.eps)
        gamma = cell.scale_for("g", m)
    relu_margin = min(
        abs(rows[i][j] * gamma[j] + cell.bias["g"][j]) for i in range(b) for j in range(m)
    )
    return gap, relu_margin


def oracle_lstm_step(w_x, w_h, bias, x_rows, h_rows, c_rows, candidate="tanh"):
    """Textbook LSTM step with fused weights, hand-transcribed.

    w_x: [4m][r], w_h: [4m][m], bias: [4m], gate order (i, f, g, o).
    candidate selects tanh (standard) or relu (for checking the thick
    cell's thickness-1 algebra with batch norm bypassed).
    """
    m = len(h_rows[0])
    cand = math.tanh if candidate == "tanh" else _relu
    h_new, c_new = [], []
    for row in range(len(x_rows)):
        z = []
        for j in range(4 * m):
            acc = bias[j]
            for k in range(len(x_rows[row])):
                acc += w_x[j][k] * x_rows[row][k]
            for k in range(m):
                acc += w_h[j][k] * h_rows[row][k]
            z.append(acc)
        c_row, h_row = [], []
        for j in range(m):
            i_g = _sigmoid(z[j])
            f_g = _sigmoid(z[m + j])
            g_g = cand(z[2 * m + j])
            o_g = _sigmoid(z[3 * m + j])
            c = f_g * c_rows[row][j] + i_g * g_g
            c_row.append(c)
            h_row.append(o_g * math.tanh(c))
        c_new.append(c_row)
        h_new.append(h_row)
    return h_new, c_new


def fd_gradient(f, p, h=1e-5):
    """Central-difference gradient of a scalar function of a flat vector.

    f takes a list of floats; returns (f(p+h e_i) - f(p-h e_i)) / 2h
    per coordinate. Raises on non-finite evaluations.
    """
    p = [float(v) for v in p]
    grad = []
    for i in range(len(p)):
        orig = p[i]
        p[i] = orig + h
        up = float(f(p))
        p[i] = orig - h
        down = float(f(p))
        p[i] = orig
        if not (math.isfinite(up) and math.isfinite(down)):
            raise ValueError(f"non-finite evaluation at coordinate {i}")
        grad.append((up - down) / (2.0 * h))
    return grad


def max_rel_err(a, b, floor=1e-6):
    """Largest elementwise relative error between two flat sequences.

    The denominator is floored so finite-difference noise on near-zero
    entries does not dominate.
    """
    worst = 0.0
    for x, y in zip(a, b, strict=True):
        denom = max(abs(x), abs(y), floor)
        worst = max(worst, abs(x - y) / denom)
    return worst
