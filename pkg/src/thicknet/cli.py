"""Command-line surface: train, sweep, gradcheck, eval.

Configuration comes from flat key=value files and/or flags; flags win.
Exit codes: 0 success, 2 bad configuration, 3 numeric divergence,
4 data/format problems.
"""

import argparse
import sys
from dataclasses import fields

import numpy as np

from . import gradcheck as gradcheck_mod
from .errors import ConfigError, FormatError, NumericError, ThickNetError
from .harness import (
    AddingEval,
    ExperimentConfig,
    build_model,
    evaluate,
    load_task_datasets,
    run_experiment,
    sweep,
)
from .layers import load_checkpoint


def _parse_bool(text):
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"cannot parse boolean value {text!r}")


_FIELD_PARSERS = {
    "task": str,
    "seq_len": int,
    "model": str,
    "hidden": int,
    "layers": int,
    "thickness": int,
    "reduction": str,
    "optimizer": str,
    "lr": float,
    "batch": int,
    "steps": int,
    "epochs": int,
    "clip": float,
    "seed": int,
    "eval_every": int,
    "out": str,
    "mnist_dir": str,
    "downscale": _parse_bool,
    "permute_seed": int,
    "train_count": int,
    "test_count": int,
    "eval_batches": int,
    "stop_below": float,
    "timing": _parse_bool,
}


def parse_config_file(path):
    """Flat UTF-8 key=value lines; blank lines and # comments ignored."""
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or key not in _FIELD_PARSERS:
                raise ConfigError(f"{path}:{lineno}: bad config line {raw.rstrip()!r}")
            entries[key] = _FIELD_PARSERS[key](value.strip())
    return entries


def _add_config_flags(parser):
    for f in fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        if _FIELD_PARSERS[f.name] is _parse_bool:
            parser.add_argument(flag, default=None, action=argparse.BooleanOptionalAction)
        else:
            parser.add_argument(flag, type=_FIELD_PARSERS[f.name], default=None)
    parser.add_argument("--config", default=None, help="key=value config file")
    parser.add_argument("--verbose", action="store_true")


def build_config(args):
    """Dataclass defaults, overridden by the config file, then by flags."""
    values = {f.name: f.default for f in fields(ExperimentConfig)}
    if args.config:
        values.update(parse_config_file(args.config))
    for name in _FIELD_PARSERS:
        flag_value = getattr(args, name)
        if flag_value is not None:
            values[name] = flag_value
    return ExperimentConfig(**values)


def _cmd_train(args):
    result = run_experiment(build_config(args), verbose=args.verbose)
    print(f"wrote {result.csv_path} and {result.checkpoint_path}")
    return 0


def _cmd_sweep(args):
    axis, _, raw_values = args.axis.partition("=")
    axis = axis.strip()
    if axis not in _FIELD_PARSERS or not raw_values:
        raise ConfigError(f"--axis must look like thickness=2,4,8,16, got {args.axis!r}")
    values = [_FIELD_PARSERS[axis](v) for v in raw_values.split(",") if v.strip()]
    results = sweep(build_config(args), axis, values, verbose=args.verbose)
    for res in results:
        print(f"wrote {res.csv_path}")
    return 0


def _cmd_gradcheck(args):
    results = gradcheck_mod.run_all(verbose=True)
    return 0 if all(passed for _, _, _, passed, _ in results) else 1


def _cmd_eval(args):
    cfg = build_config(args)
    cfg.validate()
    stack = build_model(cfg, np.random.default_rng(cfg.seed))
    stack.load_state_dict(load_checkpoint(args.checkpoint))
    if cfg.task == "adding":
        data = AddingEval(cfg.seq_len, cfg.batch, cfg.eval_batches,
                          rng=np.random.default_rng(np.random.SeedSequence([cfg.seed, 1003, 0])))
        metric = evaluate(stack, data,
                          rng=np.random.default_rng(np.random.SeedSequence([cfg.seed, 1004, 0])))
        print(f"eval_mse={metric!r}")
    else:
        _, test_ds = load_task_datasets(cfg)
        metric = evaluate(stack, test_ds, batch_size=cfg.batch,
                          rng=np.random.default_rng(np.random.SeedSequence([cfg.seed, 1004, 0])))
        print(f"test_accuracy={metric!r}")
    return 0


def make_parser():
    parser = argparse.ArgumentParser(
        prog="thicknet",
        description="Train and probe thickness-expanded LSTMs on long-sequence tasks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training experiment")
    _add_config_flags(p_train)
    p_train.set_defaults(func=_cmd_train)

    p_sweep = sub.add_parser("sweep", help="run one variant per axis value")
    _add_config_flags(p_sweep)
    p_sweep.add_argument("--axis", required=True,
                         help="e.g. thickness=2,4,8,16 or reduction=max,mean,random")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p_grad.set_defaults(func=_cmd_gradcheck)

    p_eval = sub.add_parser("eval", help="evaluate a saved checkpoint")
    _add_config_flags(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.set_defaults(func=_cmd_eval)
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:  # includes training divergence
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except (FormatError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 4
    except ThickNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
