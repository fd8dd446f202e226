"""Experiment driver: declarative configs, training loops, CSV curves.

A run is fully determined by its ExperimentConfig (seed included):
parameter init, data generation, reduction draws, shuffling and
evaluation streams all derive from it, so rerunning a config rewrites
the same CSV byte for byte. Wall-clock timing is off by default for
exactly that reason; --timing trades reproducible bytes for real
timings in the wall_ms column.
"""

import os
import time
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from . import optim, tasks
from .autograd import Tape, Tensor, mse_loss, softmax_cross_entropy
from .errors import ConfigError, DivergenceError, NumericError
from .layers import LSTMCell, RNNStack, ThickLSTMCell, save_checkpoint

TASKS = ("adding", "mnist", "pmnist")
MODELS = ("thick", "lstm")
REDUCTIONS = ("max", "mean", "random")
OPTIMIZERS = ("adam", "sgd")

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


@dataclass
class ExperimentConfig:
    """Everything one training run depends on, echoed into its CSV."""

    task: str = "adding"
    seq_len: int = 100
    model: str = "thick"
    hidden: int = 128
    layers: int = 1
    thickness: int = 4
    reduction: str = "max"
    optimizer: str = "adam"
    lr: float = 2e-3
    batch: int = 32
    steps: int = 2000
    epochs: int = 5
    clip: Optional[float] = None  # None = task default (off for adding, 1.0 for mnist)
    seed: int = 42
    eval_every: int = 100
    out: str = "curve.csv"
    mnist_dir: str = "data/mnist"
    downscale: bool = True
    permute_seed: Optional[int] = None  # None = task default (0 plain, 10007 permuted)
    train_count: int = 10000
    test_count: int = 2000
    eval_batches: int = 10
    stop_below: Optional[float] = None  # stop once the eval metric drops below this
    timing: bool = False

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.reduction not in REDUCTIONS:
            raise ConfigError(f"reduction must be one of {REDUCTIONS}, got {self.reduction!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.thickness < 1:
            raise ConfigError(f"thickness must be >= 1, got {self.thickness}")
        if self.model == "lstm" and self.thickness != 1:
            raise ConfigError("model=lstm forces thickness=1")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch < 1 or self.hidden < 1 or self.layers < 1:
            raise ConfigError("batch, hidden and layers must all be >= 1")
        if self.task == "adding" and self.seq_len < 2:
            raise ConfigError(f"adding needs seq_len >= 2, got {self.seq_len}")
        if self.steps < 0 or self.epochs < 0:
            raise ConfigError("steps and epochs must be >= 0")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.clip is not None and self.clip < 0:
            raise ConfigError(f"clip must be >= 0 (0 disables), got {self.clip}")
        if self.eval_batches < 1:
            raise ConfigError("eval_batches must be >= 1")
        return self

    def effective_clip(self):
        """Task-dependent default: off for adding, 1.0 for the MNIST tasks."""
        if self.clip is None:
            return None if self.task == "adding" else 1.0
        return None if self.clip == 0 else self.clip

    def effective_permute_seed(self):
        if self.permute_seed is not None:
            return self.permute_seed
        if self.task == "pmnist":
            return tasks.DEFAULT_PERMUTATION_SEED
        return tasks.IDENTITY_PERMUTATION_SEED


@dataclass
class CurvePoint:
    step: int
    train_loss: float
    eval_metric: float
    wall_ms: float


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    curve: list
    csv_path: str
    checkpoint_path: str


def task_seq_len(cfg):
    if cfg.task == "adding":
        return cfg.seq_len
    return 14 * 14 if cfg.downscale else 28 * 28


def build_model(cfg, rng):
    """Instantiate the configured cell stack plus task head.

    BN running statistics are shared across timesteps, so the 0.1
    momentum is budgeted per optimization step: each of the T per-
    timestep updates carries momentum 0.1/T. A flat 0.1 per call would
    leave the running statistics remembering only the last couple of
    timesteps of each sequence, and eval-mode normalization would be
    wrong for every earlier position.
    """
    input_size = 2 if cfg.task == "adding" else 1
    output_dim = 1 if cfg.task == "adding" else 10
    momentum = 0.1 / task_seq_len(cfg)
    cells = []
    for i in range(cfg.layers):
        in_dim = input_size if i == 0 else cfg.hidden
        if cfg.model == "thick":
            cells.append(ThickLSTMCell(in_dim, cfg.hidden, cfg.thickness, cfg.reduction,
                                       rng, bn_momentum=momentum))
        else:
            cells.append(LSTMCell(in_dim, cfg.hidden, rng))
    return RNNStack(cells, output_dim, rng)


@dataclass
class AddingEval:
    """Evaluation spec for the adding task: fresh generated batches."""

    seq_len: int
    batch: int
    n_batches: int = 10
    rng: object = field(default=None, repr=False)


def evaluate(stack, task_data, batch_size=128, rng=None):
    """Metric on held-out data: MSE for adding, accuracy for MNIST.

    Runs in eval mode (running BN statistics) and never touches
    parameters, optimizer state, or the BN statistics themselves.
    """
    if isinstance(task_data, AddingEval):
        gen_rng = task_data.rng if task_data.rng is not None else np.random.default_rng(0)
        total = 0.0
        for _ in range(task_data.n_batches):
            batch = tasks.gen_adding_batch(task_data.seq_len, task_data.batch, gen_rng)
            preds = stack.run_sequence(batch.inputs(), mode="eval", rng=rng)
            total += float(np.mean((preds.data[:, 0] - batch.labels) ** 2))
        return total / task_data.n_batches
    if isinstance(task_data, tasks.MnistDataset):
        correct = 0
        sweep_rng = np.random.default_rng(0)
        for xs, labels in tasks.batch_iterator(task_data, batch_size, sweep_rng, shuffle=False):
            logits = stack.run_sequence(xs, mode="eval", rng=rng)
            correct += int(np.sum(np.argmax(logits.data, axis=1) == labels))
        return correct / task_data.count
    raise ConfigError(f"evaluate cannot handle task data of type {type(task_data)!r}")


def _format_value(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_curve_csv(path, cfg, curve):
    """Config echo as comment lines, then the four-column curve."""
    lines = []
    for f in fields(cfg):
        lines.append(f"# {f.name}={_format_value(getattr(cfg, f.name))}")
    lines.append("step,train_loss,eval_metric,wall_ms")
    for pt in curve:
        lines.append(
            f"{pt.step},{_format_value(pt.train_loss)},"
            f"{_format_value(pt.eval_metric)},{_format_value(pt.wall_ms)}"
        )
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_curve_csv(path):
    """Read back (config_echo: dict, curve: list[CurvePoint])."""
    echo = {}
    curve = []
    with open(path) as fh:
        rows = [line.rstrip("\n") for line in fh]
    body = []
    for line in rows:
        if line.startswith("# "):
            key, _, value = line[2:].partition("=")
            echo[key] = value
        elif line:
            body.append(line)
    if not body or body[0] != "step,train_loss,eval_metric,wall_ms":
        raise ConfigError(f"{path}: missing curve header row")
    for line in body[1:]:
        s, tl, ev, wm = line.split(",")
        curve.append(CurvePoint(int(s), float(tl), float(ev), float(wm)))
    return echo, curve


def _mnist_paths(cfg, split):
    base = os.path.join(cfg.mnist_dir, MNIST_FILES[split])
    for candidate in (base, base + ".gz"):
        if os.path.exists(candidate):
            return candidate
    return base  # let the loader raise its file error


def load_task_datasets(cfg):
    """Load, downscale and permute the MNIST train/test splits per config."""
    train = tasks.load_mnist_idx(
        _mnist_paths(cfg, "train_images"), _mnist_paths(cfg, "train_labels")
    )
    test = tasks.load_mnist_idx(
        _mnist_paths(cfg, "test_images"), _mnist_paths(cfg, "test_labels")
    )
    if cfg.downscale:
        train = tasks.downscale(train)
        test = tasks.downscale(test)
    seed = cfg.effective_permute_seed()
    train = tasks.permute_pixels(train, seed)
    test = tasks.permute_pixels(test, seed)
    if cfg.train_count:
        train = tasks.subset(train, cfg.train_count)
    if cfg.test_count:
        test = tasks.subset(test, cfg.test_count)
    return train, test


def _checkpoint_path(out):
    stem, _ = os.path.splitext(out)
    return stem + ".ckpt"


def run_experiment(cfg, verbose=False):
    """Train one configured model; returns the curve and artifact paths.

    Deterministic given the config. Non-finite losses abort the run with
    the offending step recorded, after flushing the curve so far.
    """
    cfg.validate()
    root = np.random.SeedSequence(cfg.seed)
    init_ss, data_ss, reduce_ss, shuffle_ss = root.spawn(4)
    init_rng = np.random.default_rng(init_ss)
    data_rng = np.random.default_rng(data_ss)
    reduce_rng = np.random.default_rng(reduce_ss)
    shuffle_rng = np.random.default_rng(shuffle_ss)

    stack = build_model(cfg, init_rng)
    params = stack.parameters()
    adam = optim.AdamState(params, lr=cfg.lr) if cfg.optimizer == "adam" else None
    clip = cfg.effective_clip()
    curve = []
    start = time.perf_counter()
    csv_path, ckpt_path = cfg.out, _checkpoint_path(cfg.out)

    def wall():
        return (time.perf_counter() - start) * 1000.0 if cfg.timing else 0.0

    def train_step(xs, loss_fn, step):
        tape = Tape()
        for _, p in params:
            tape.watch(p)
        try:
            with tape:
                loss = loss_fn(stack.run_sequence(xs, mode="train", rng=reduce_rng))
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise DivergenceError(f"loss diverged at step {step}", step=step)
            tape.backward(loss)
        except DivergenceError:
            raise
        except NumericError as exc:
            raise DivergenceError(f"{exc} at step {step}", step=step) from exc
        grads = [p.grad.data for _, p in params]
        if clip is not None:
            grads = optim.clip_global_norm(grads, clip)
        if adam is not None:
            optim.adam_step(params, grads, adam)
        else:
            optim.sgd_step(params, grads, cfg.lr)
        return loss_val

    def log_point(step, train_loss, metric):
        curve.append(CurvePoint(step, train_loss, metric, wall()))
        if verbose:
            print(f"[{cfg.task}/{cfg.model}] step {step}: "
                  f"train_loss={train_loss:.6f} eval={metric:.6f}")

    try:
        if cfg.task == "adding":
            eval_idx = 0
            for step in range(1, cfg.steps + 1):
                batch = tasks.gen_adding_batch(cfg.seq_len, cfg.batch, data_rng)
                labels = Tensor(batch.labels[:, None])
                loss_val = train_step(
                    batch.inputs(), lambda preds: mse_loss(preds, labels), step
                )
                if step % cfg.eval_every == 0 or step == cfg.steps:
                    eval_idx += 1
                    spec = AddingEval(
                        cfg.seq_len, cfg.batch, cfg.eval_batches,
                        rng=np.random.default_rng(
                            np.random.SeedSequence([cfg.seed, 1003, eval_idx])
                        ),
                    )
                    metric = evaluate(
                        stack, spec,
                        rng=np.random.default_rng(
                            np.random.SeedSequence([cfg.seed, 1004, eval_idx])
                        ),
                    )
                    log_point(step, loss_val, metric)
                    if cfg.stop_below is not None and metric < cfg.stop_below:
                        break
        else:
            train_ds, test_ds = load_task_datasets(cfg)
            step = 0
            for _ in range(cfg.epochs):
                loss_val = float("nan")
                for xs, labels in tasks.batch_iterator(train_ds, cfg.batch, shuffle_rng):
                    step += 1
                    loss_val = train_step(
                        xs, lambda preds: softmax_cross_entropy(preds, labels), step
                    )
                metric = evaluate(
                    stack, test_ds, batch_size=cfg.batch,
                    rng=np.random.default_rng(np.random.SeedSequence([cfg.seed, 1004, step])),
                )
                log_point(step, loss_val, metric)
                if cfg.stop_below is not None and metric < cfg.stop_below:
                    break
    except DivergenceError:
        write_curve_csv(csv_path, cfg, curve)
        raise

    write_curve_csv(csv_path, cfg, curve)
    save_checkpoint(ckpt_path, stack.state_dict())
    return ExperimentResult(config=cfg, curve=curve, csv_path=csv_path,
                            checkpoint_path=ckpt_path)


def sweep(cfg, axis, values, verbose=False):
    """Run one variant per axis value, same seed, one CSV each.

    axis is a config field name (`thickness` or `reduction` for the
    published ablations, but any field works). Output files encode the
    variant: <stem>_<axis>-<value>.csv.
    """
    if not values:
        raise ConfigError("sweep needs at least one axis value")
    stem, ext = os.path.splitext(cfg.out)
    results = []
    for value in values:
        variant = replace(cfg, **{axis: value}, out=f"{stem}_{axis}-{value}{ext or '.csv'}")
        results.append(run_experiment(variant, verbose=verbose))
    return results
