#!/usr/bin/env python3
"""Benchmark the compiled kernel core against the numpy fallback.

Times each hot kernel at the shapes the recurrent cells actually use,
plus one full train step of the adding-problem configuration under each
backend. Run from the repo root:

    python benchmarks/bench_kernels.py [--batch 32] [--hidden 64] [--thickness 4]
"""

import argparse
import os
import time

import numpy as np


def best_of(fn, repeats=5, inner=200):
    fn()
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        for _ in range(inner):
            fn()
        best = min(best, (time.perf_counter() - start) / inner)
    return best


def bench_kernels(batch, hidden, thickness):
    from thicknet.backend import available_backends, get_kernels

    backends = {name: get_kernels(name) for name in available_backends()}
    rng = np.random.default_rng(0)
    x = rng.standard_normal((batch, hidden))
    g = rng.standard_normal((batch, hidden))
    y3 = rng.standard_normal((batch, thickness, hidden))
    idx = rng.integers(0, thickness, size=(batch, hidden), dtype=np.int64)
    p = rng.standard_normal(hidden * hidden)
    moments = {name: (np.zeros_like(p), np.zeros_like(p)) for name in backends}

    cases = {
        "sigmoid": lambda k: k.sigmoid(x),
        "tanh": lambda k: k.tanh(x),
        "relu_grad": lambda k: k.relu_grad(g, x),
        "max_reduce": lambda k: k.max_reduce(y3),
        "scatter_grad": lambda k: k.scatter_reduce_grad(g, idx, thickness),
        "mean_reduce": lambda k: k.mean_reduce(y3),
        "bn_train": lambda k: k.bn_train(x, 1e-5),
        "bn_train_grad": lambda k: k.bn_train_grad(
            g, *_bn_ctx(k, x)
        ),
        "adam_update": lambda k: k.adam_update(
            p, p, *moments["python"], 2e-3, 0.9, 0.999, 1e-8, 0.1, 0.001
        ),
    }

    def _bn_ctx(k, xx):
        xh, _, inv = k.bn_train(xx, 1e-5)
        return xh, inv

    width = max(len(n) for n in cases)
    header = f"{'kernel':<{width}}  " + "  ".join(f"{n:>12}" for n in backends)
    print(header)
    print("-" * len(header))
    for name, fn in cases.items():
        row = [f"{name:<{width}}"]
        for bname, k in backends.items():
            us = best_of(lambda: fn(k)) * 1e6
            row.append(f"{us:>10.1f}us")
        print("  ".join(row))


def bench_train_step(batch, hidden, thickness, seq_len):
    """One full adding-problem train step per backend (separate process state)."""
    from thicknet import optim, tasks
    from thicknet.autograd import Tape, Tensor, mse_loss
    from thicknet.harness import ExperimentConfig, build_model

    cfg = ExperimentConfig(task="adding", seq_len=seq_len, hidden=hidden,
                           thickness=thickness, batch=batch, seed=0)
    stack = build_model(cfg, np.random.default_rng(0))
    params = stack.parameters()
    adam = optim.AdamState(params, lr=cfg.lr)
    data_rng = np.random.default_rng(1)

    def step():
        batch_data = tasks.gen_adding_batch(cfg.seq_len, cfg.batch, data_rng)
        labels = Tensor(batch_data.labels[:, None])
        tape = Tape()
        for _, prm in params:
            tape.watch(prm)
        with tape:
            loss = mse_loss(stack.run_sequence(batch_data.inputs(), mode="train"), labels)
        tape.backward(loss)
        optim.adam_step(params, [prm.grad.data for _, prm in params], adam)

    ms = best_of(step, repeats=3, inner=5) * 1e3
    from thicknet.backend import backend_name
    print(f"full train step [{backend_name}] "
          f"(T={seq_len}, batch={batch}, hidden={hidden}, n={thickness}): {ms:.1f} ms")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=32)
    parser.add_argument("--hidden", type=int, default=64)
    parser.add_argument("--thickness", type=int, default=4)
    parser.add_argument("--seq-len", type=int, default=100)
    parser.add_argument("--train-step", action="store_true",
                        help="also time one full train step under the active backend")
    args = parser.parse_args()

    print(f"THICKNET_KERNELS={os.environ.get('THICKNET_KERNELS', '(unset)')}")
    bench_kernels(args.batch, args.hidden, args.thickness)
    if args.train_step:
        bench_train_step(args.batch, args.hidden, args.thickness, args.seq_len)


if __name__ == "__main__":
    main()
