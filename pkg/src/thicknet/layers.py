"""Thick building blocks, an LSTM baseline, stacking, and checkpoints.

A "thick" layer owns n weight matrices per linear map; each output node
sees n candidate values and keeps one of them (max by default). The
LSTM cell built from these follows the gating
    c_t = sigmoid(BN(f)) * c_{t-1} + sigmoid(BN(i)) * relu(BN(g))
    h_t = sigmoid(BN(o)) * tanh(c_t)
where every gate pre-activation is thick over both the input and hidden
streams, plus one bias added outside the reductions.
"""

import struct
from collections import OrderedDict

import numpy as np

from . import autograd as ag
from .autograd import BNState, Tensor
from .errors import ArgumentError, DimensionError, FormatError, NumericError

GATES = ("i", "f", "o", "g")


def init_params(shape, fan_in, fan_out, rng):
    """Xavier/Glorot uniform parameter tensor: U(-b, b), b = sqrt(6/(fan_in+fan_out))."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class ThickLinear:
    """n parallel linear maps r -> m, reduced elementwise along thickness.

    The weight stack is one [n, m, r] tensor; w[i] is the i-th matrix.
    With thickness 1 the forward pass is exactly a single matrix product
    regardless of the configured reduction.
    """

    def __init__(self, in_dim, out_dim, thickness, reduction="max", rng=None):
        if thickness < 1:
            raise ArgumentError(f"thickness must be >= 1, got {thickness}")
        if reduction not in ("max", "mean", "random"):
            raise ArgumentError(f"unknown reduction {reduction!r}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.thickness = thickness
        self.reduction = reduction
        if rng is None:
            rng = np.random.default_rng()
        self.w = init_params((thickness, out_dim, in_dim), in_dim, out_dim, rng)

    @property
    def weights(self):
        """The n matrices as [m, r] views into the stacked parameter."""
        return [self.w.data[i] for i in range(self.thickness)]

    def forward(self, x, rng=None):
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.data.shape[-1] != self.in_dim:
            raise DimensionError(
                f"input width {x.data.shape[-1]} != layer in_dim {self.in_dim}"
            )
        return ag.thick_matmul(x, self.w, self.reduction, rng)

    __call__ = forward


class ThickLSTMCell:
    """LSTM cell whose gate pre-activations come from thick linear maps.

    Per gate: one thick map over h_prev (m x m), one over x_t (m x r),
    one shared-across-time batch-norm state applied to the summed
    reduction outputs, then a learnable per-feature scale and the gate
    bias on the normalized value. The candidate nonlinearity is relu;
    all other gates are sigmoid.

    The scale/bias placement is load-bearing for long-range memory. BN
    subtracts the per-feature batch mean, so a bias added before it
    cancels out of the train-mode output exactly: the forget gate would
    be pinned near sigmoid(0) = 0.5 and memories would halve every step.
    After normalization the bias keeps its role (forget gate starts open
    at +1). The scale starts at 0.1 so early pre-activations sit in the
    near-linear region of the gate nonlinearities, the usual recipe for
    normalized recurrences; without it the unit-variance gate noise
    drowns the recurrent signal and the adding task never escapes the
    predict-the-mean plateau.

    identity_bn is a test hook bypassing normalization and scale so the
    thickness-1 algebra can be compared against a plain LSTM step.
    """

    def __init__(self, input_size, hidden_size, thickness, reduction="max",
                 rng=None, bn_eps=1e-5, bn_momentum=0.1, bn_scale_init=0.1,
                 identity_bn=False):
        if rng is None:
            rng = np.random.default_rng()
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.thickness = thickness
        self.reduction = reduction
        self.identity_bn = identity_bn
        m, r, n = hidden_size, input_size, thickness
        self.wh = {g: ThickLinear(m, m, n, reduction, rng) for g in GATES}
        self.wx = {g: ThickLinear(r, m, n, reduction, rng) for g in GATES}
        self.scale = {g: Tensor(np.full(m, bn_scale_init), requires_grad=True)
                      for g in GATES}
        self.bias = {g: Tensor(np.zeros(m), requires_grad=True) for g in GATES}
        self.bias["f"].data[:] = 1.0  # forget gate starts open
        self.bn = {g: BNState(m, eps=bn_eps, momentum=bn_momentum) for g in GATES}

    def step(self, x_t, h_prev, c_prev, mode="train", rng=None):
        """One transition; returns (h_t, c_t), each [batch, hidden]."""
        normed = {}
        for gate in GATES:
            pre = ag.add(self.wh[gate].forward(h_prev, rng), self.wx[gate].forward(x_t, rng))
            if not np.isfinite(pre.data).all():
                raise NumericError(f"non-finite pre-activation in gate {gate!r}")
            if self.identity_bn:
                normed[gate] = ag.add(pre, self.bias[gate])
            else:
                normed[gate] = ag.batch_norm_affine(
                    pre, self.bn[gate], self.scale[gate], self.bias[gate], mode
                )
        f_t = ag.sigmoid(normed["f"])
        i_t = ag.sigmoid(normed["i"])
        o_t = ag.sigmoid(normed["o"])
        g_t = ag.relu(normed["g"])
        c_t = ag.add(ag.ewise_mul(f_t, c_prev), ag.ewise_mul(i_t, g_t))
        h_t = ag.ewise_mul(o_t, ag.tanh(c_t))
        return h_t, c_t

    def parameters(self):
        out = []
        for gate in GATES:
            out.append((f"wh_{gate}", self.wh[gate].w))
            out.append((f"wx_{gate}", self.wx[gate].w))
            out.append((f"scale_{gate}", self.scale[gate]))
            out.append((f"b_{gate}", self.bias[gate]))
        return out

    def bn_states(self):
        return [(f"bn_{gate}", self.bn[gate]) for gate in GATES]

    def num_params(self):
        return sum(p.data.size for _, p in self.parameters())


class LSTMCell:
    """Standard LSTM cell with fused gate weights, tanh candidate, no BN.

    Gate blocks are ordered (i, f, g, o) along the fused axis.
    """

    BLOCKS = ("i", "f", "g", "o")

    def __init__(self, input_size, hidden_size, rng=None):
        if rng is None:
            rng = np.random.default_rng()
        self.input_size = input_size
        self.hidden_size = hidden_size
        m, r = hidden_size, input_size
        self.w_x = init_params((4 * m, r), r, m, rng)
        self.w_h = init_params((4 * m, m), m, m, rng)
        bias = np.zeros(4 * m)
        bias[m:2 * m] = 1.0  # forget block
        self.b = Tensor(bias, requires_grad=True)

    def step(self, x_t, h_prev, c_prev, mode="train", rng=None):
        m = self.hidden_size
        z = ag.add(ag.linear(x_t, self.w_x, self.b), ag.linear(h_prev, self.w_h))
        if not np.isfinite(z.data).all():
            raise NumericError("non-finite pre-activation in lstm gates")
        i_t = ag.sigmoid(ag.slice_cols(z, 0, m))
        f_t = ag.sigmoid(ag.slice_cols(z, m, 2 * m))
        g_t = ag.tanh(ag.slice_cols(z, 2 * m, 3 * m))
        o_t = ag.sigmoid(ag.slice_cols(z, 3 * m, 4 * m))
        c_t = ag.add(ag.ewise_mul(f_t, c_prev), ag.ewise_mul(i_t, g_t))
        h_t = ag.ewise_mul(o_t, ag.tanh(c_t))
        return h_t, c_t

    def parameters(self):
        return [("w_x", self.w_x), ("w_h", self.w_h), ("b", self.b)]

    def bn_states(self):
        return []

    def num_params(self):
        return sum(p.data.size for _, p in self.parameters())


class RNNStack:
    """Vertical stack of cells plus a plain linear readout head.

    run_sequence consumes [T, batch, r] inputs from zero initial state
    and applies the head to the final top-layer hidden state.
    """

    def __init__(self, cells, output_dim, rng=None):
        if rng is None:
            rng = np.random.default_rng()
        for lower, upper in zip(cells, cells[1:]):
            if upper.input_size != lower.hidden_size:
                raise DimensionError(
                    f"layer input {upper.input_size} != previous hidden {lower.hidden_size}"
                )
        self.cells = list(cells)
        self.output_dim = output_dim
        m = cells[-1].hidden_size
        self.head_w = init_params((output_dim, m), m, output_dim, rng)
        self.head_b = Tensor(np.zeros(output_dim), requires_grad=True)

    def run_sequence(self, xs, mode="train", rng=None):
        xs = xs.data if isinstance(xs, Tensor) else np.asarray(xs, dtype=np.float64)
        if xs.ndim != 3:
            raise DimensionError(f"run_sequence expects [T, batch, r], got {xs.shape}")
        seq_len, batch = xs.shape[0], xs.shape[1]
        if seq_len < 1:
            raise ArgumentError("sequence length must be >= 1")
        h = [ag.zeros((batch, cell.hidden_size)) for cell in self.cells]
        c = [ag.zeros((batch, cell.hidden_size)) for cell in self.cells]
        for t in range(seq_len):
            inp = Tensor(xs[t])
            for i, cell in enumerate(self.cells):
                h[i], c[i] = cell.step(inp, h[i], c[i], mode=mode, rng=rng)
                inp = h[i]
        return ag.linear(h[-1], self.head_w, self.head_b)

    __call__ = run_sequence

    def parameters(self):
        out = []
        for idx, cell in enumerate(self.cells):
            out.extend((f"cell{idx}.{name}", p) for name, p in cell.parameters())
        out.append(("head.w", self.head_w))
        out.append(("head.b", self.head_b))
        return out

    def num_params(self):
        return sum(p.data.size for _, p in self.parameters())

    def state_dict(self):
        """All learnable parameters plus BN running statistics."""
        out = OrderedDict((name, p.data) for name, p in self.parameters())
        for idx, cell in enumerate(self.cells):
            for name, bn in cell.bn_states():
                out[f"cell{idx}.{name}.mean"] = bn.running_mean
                out[f"cell{idx}.{name}.var"] = bn.running_var
                out[f"cell{idx}.{name}.updates"] = np.array([float(bn.num_updates)])
        return out

    def load_state_dict(self, entries):
        current = self.state_dict()
        if set(entries) != set(current):
            missing = sorted(set(current) - set(entries))
            extra = sorted(set(entries) - set(current))
            raise ArgumentError(f"state mismatch: missing {missing}, unexpected {extra}")
        params = dict(self.parameters())
        for name, arr in entries.items():
            if arr.shape != current[name].shape:
                raise DimensionError(
                    f"{name}: shape {arr.shape} does not match {current[name].shape}"
                )
            if name in params:
                params[name].data[...] = arr
        for idx, cell in enumerate(self.cells):
            for name, bn in cell.bn_states():
                bn.running_mean = entries[f"cell{idx}.{name}.mean"].copy()
                bn.running_var = entries[f"cell{idx}.{name}.var"].copy()
                bn.num_updates = int(entries[f"cell{idx}.{name}.updates"][0])


# ---------------------------------------------------------------------------
# checkpoint file format
#
# magic "THKN", u32 LE version, then per entry:
#   u16 LE name length, UTF-8 name, u8 rank, u32 LE dims, f64 LE values

CHECKPOINT_MAGIC = b"THKN"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, entries):
    """Write named float64 arrays in the flat versioned binary layout."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        for name, arr in entries.items():
            arr = np.asarray(arr, dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(arr).astype("<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint back into an ordered {name: array} mapping."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {blob[:4]!r}", offset=0)
    if len(blob) < 8:
        raise FormatError("truncated checkpoint header", offset=len(blob))
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    entries = OrderedDict()
    pos = 8
    while pos < len(blob):
        if pos + 2 > len(blob):
            raise FormatError("truncated entry header", offset=pos)
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        if pos + name_len + 1 > len(blob):
            raise FormatError("truncated entry name", offset=pos)
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        rank = blob[pos]
        pos += 1
        if pos + 4 * rank > len(blob):
            raise FormatError(f"truncated dims for {name!r}", offset=pos)
        shape = struct.unpack_from(f"<{rank}I", blob, pos) if rank else ()
        pos += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        nbytes = 8 * count
        if pos + nbytes > len(blob):
            raise FormatError(f"truncated payload for {name!r}", offset=pos)
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape)
        entries[name] = arr.astype(np.float64)
        pos += nbytes
    return entries
