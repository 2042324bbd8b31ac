"""Command-line entry point.

Subcommands: train, eval, interp, export, gradcheck, synth. Exit codes:
0 success, 1 validation error, 2 I/O or format error, 3 numerical
divergence. The environment variable AIB_DATA_DIR supplies the default
dataset root; every command that produces an output directory writes the
fully-resolved configuration into it.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .checkpoint import load_arrays
from .config import load_run_config
from .data import MOD_KINDS, Modification
from .exceptions import AibError, DivergenceError, FormatError
from .gradcheck import format_table, run_suite
from .interpret import export_attention, interpretability_score, write_report
from .model import AibModel
from .synthetic import write_mnist_like
from .training import evaluate, train
from .variational import NoiseSource


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a configuration key (repeatable; wins over the file)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aib",
        description="attention-bottleneck classifier: training and evaluation tools",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoint + metrics")
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=("mean", "stochastic"), default="mean")
    p.add_argument("--average", choices=("prob", "logprob"), default="prob")
    p.add_argument("--seed", type=int, default=0, help="noise seed for stochastic mode")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("interp", help="interpretability score under a modification")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--kind", choices=MOD_KINDS, required=True)
    p.add_argument("--p", type=int, default=8, help="occlusion window size")
    p.add_argument("--r", type=float, default=4.0, help="frequency cutoff radius")
    p.add_argument("--tau", type=float, default=0.8, help="cosine threshold")
    p.add_argument("--seed", type=int, default=0, help="modification seed")
    p.add_argument("--out", required=True, help="report output directory")
    p.set_defaults(func=cmd_interp)

    p = sub.add_parser("export", help="write attention maps as PGM/PPM images")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int, default=None, help="cap the sample count")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("gradcheck", help="finite-difference check of every operation")
    p.add_argument("--scale", choices=("tiny", "small"), default="tiny")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="generate a synthetic two-class IDX dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=1200, help="train samples per class")
    p.add_argument("--n-test", type=int, default=300, help="test samples per class")
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_synth)
    return parser


def _load_model(cfg, checkpoint_path) -> AibModel:
    model = AibModel(cfg.model_config(), seed=cfg.seed)
    model.load_state(load_arrays(checkpoint_path))
    return model


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.overrides)
    cfg.require("out_dir", "data_dir")
    cfg.write_effective(cfg.out_dir)
    train_ds, test_ds = cfg.load_datasets()
    model = AibModel(cfg.model_config(), seed=cfg.seed)
    result = train(
        model,
        train_ds,
        test_ds,
        epochs=cfg.epochs,
        out_dir=cfg.out_dir,
        batch_size=cfg.batch_size,
        base_lr=cfg.base_lr,
        momentum=cfg.momentum,
        weight_decay=cfg.weight_decay,
        seed=cfg.seed,
        objective=cfg.objective,
        augment_data=cfg.augment,
        eval_average=cfg.eval_average,
    )
    print(
        json.dumps(
            {
                "best_acc": result.best_acc,
                "final_acc": result.final_acc,
                "steps": result.steps,
                "metrics": result.metrics_path,
                "checkpoint": result.checkpoint_path,
                "best_checkpoint": result.best_checkpoint_path,
            }
        )
    )
    return 0


def _eval_dataset(cfg):
    train_ds, test_ds = cfg.load_datasets()
    return train_ds, (train_ds if cfg.eval_split == "train" else test_ds)


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config, args.overrides)
    cfg.require("data_dir")
    _, ds = _eval_dataset(cfg)
    model = _load_model(cfg, args.checkpoint)
    noise = NoiseSource(args.seed) if args.mode == "stochastic" else None
    result = evaluate(model, ds, mode=args.mode, noise=noise, average=args.average)
    out = {"accuracy": result.accuracy, "n": result.n, "mode": args.mode,
           "average": args.average}
    out.update(result.breakdown.as_dict())
    print(json.dumps(out))
    return 0


def cmd_interp(args) -> int:
    cfg = load_run_config(args.config, args.overrides)
    cfg.require("data_dir")
    train_ds, ds = _eval_dataset(cfg)
    model = _load_model(cfg, args.checkpoint)
    mod = Modification(kind=args.kind, p=args.p, r=args.r, seed=args.seed)
    patch_ds = train_ds if args.kind == "occlude-patch" else None
    report = interpretability_score(model, ds, mod, tau=args.tau, patch_ds=patch_ds)
    cfg.write_effective(args.out)
    write_report(report, args.out)
    print(json.dumps(report.as_dict()))
    return 0


def cmd_export(args) -> int:
    cfg = load_run_config(args.config, args.overrides)
    cfg.require("data_dir")
    _, ds = _eval_dataset(cfg)
    model = _load_model(cfg, args.checkpoint)
    files = export_attention(model, ds, args.out, limit=args.limit)
    cfg.write_effective(args.out)
    print(json.dumps({"dir": args.out, "files": len(files)}))
    return 0


def cmd_gradcheck(args) -> int:
    results = run_suite(args.scale, args.seed)
    print(format_table(results))
    return 0 if all(r.passed for r in results) else 1


def cmd_synth(args) -> int:
    info = write_mnist_like(args.out, args.n_train, args.n_test, args.seed)
    print(json.dumps(info))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors; those are validation failures here
        return 0 if e.code in (0, None) else 1
    try:
        return args.func(args)
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except FormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except AibError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
