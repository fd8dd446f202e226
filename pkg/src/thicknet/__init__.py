"""Thickness-expanded recurrent networks on a from-scratch autodiff tape.

Each hidden unit is fed by n parallel linear transforms whose outputs
are reduced elementwise (max by default) to a single value. The package
bundles the tape-based reverse-mode core, the thick layers and an LSTM
baseline, optimizers, synthetic task generators, and a deterministic
experiment harness with a CLI.
"""

from .backend import backend_name
from .autograd import (
    BNState,
    Tape,
    Tensor,
    add,
    batch_norm,
    batch_norm_affine,
    elem_sum,
    ewise_mul,
    linear,
    matmul,
    mse_loss,
    relu,
    scale_cols,
    sigmoid,
    slice_cols,
    softmax_cross_entropy,
    stack_max,
    stack_mean,
    stack_random,
    tanh,
    thick_matmul,
    zeros,
)

__version__ = "0.1.0"

__all__ = [
    "BNState",
    "Tape",
    "Tensor",
    "add",
    "backend_name",
    "batch_norm",
    "batch_norm_affine",
    "elem_sum",
    "ewise_mul",
    "linear",
    "matmul",
    "mse_loss",
    "relu",
    "scale_cols",
    "sigmoid",
    "slice_cols",
    "softmax_cross_entropy",
    "stack_max",
    "stack_mean",
    "stack_random",
    "tanh",
    "thick_matmul",
    "zeros",
    "__version__",
]
