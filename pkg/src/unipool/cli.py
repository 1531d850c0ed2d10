"""Command-line entry point: ``unipool <command> [options] [--dotted.key value ...]``.

Commands: train, eval, gradcheck, analyze, synth, sweep.

Any configuration key can be given as ``--key value`` or ``--key=value``
(``--pool.local universal:fc1``, ``--train.lr0 0.05``); a handful of short
aliases (``--arch``, ``--epochs``, ``--seed``, ...) map onto the same keys.
``--config FILE`` supplies a ``key = value`` file; command-line values win.

Exit codes: 0 success, 1 usage/configuration error, 2 data error,
3 numerical failure (divergence, gradient check above tolerance).  Errors
are reported on stderr as a single line ``ERROR:<exit code>:<kind>: message``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .analysis import (AnalysisError, MIN_SENSITIVITY_INPUTS, Thresholds, categorize_sites, export,
                       extract_weights, format_summary, write_summary_csv)
from .autodiff import Tensor, precision, set_precision
from .checkpoint import CheckpointError
from .config import PAPER_SCALE_WARNING, ConfigError, RunConfig, read_config_file
from .data import (DataError, Dataset, default_data_dir, export_cifar_layout, load_cifar10, load_cifar_dir,
                   subset, synthetic_splits)
from .models import build_model
from .pooling.spec import TABLE3_ROWS
from .train import (DivergenceError, Metrics, TrainState, evaluate, grad_check, load_checkpoint,
                    perturb_pooling, train)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

ALIASES = {
    "arch": "model.arch",
    "epochs": "train.epochs",
    "seed": "train.seed",
    "lr": "train.lr0",
    "batch-size": "train.batch_size",
    "precision": "train.precision",
    "data": "data.source",
    "data-dir": "data.dir",
    "image-size": "data.image_size",
    "out": "run.out",
    "scale": "run.scale",
}

SWEEP_HEADER = ["method", "local_pool", "global_pool", "seed", "epochs", "train_loss", "train_top1",
                "test_top1", "test_top5", "wall_time_s"]
SWEEP_SUMMARY_HEADER = ["method", "local_pool", "global_pool", "runs", "test_top1_mean", "test_top1_std",
                        "train_top1_mean"]


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind = code, kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); usage errors are 1 here
        raise CliError(EXIT_USAGE, "usage", message)


def split_overrides(tokens: Sequence[str]) -> list[tuple[str, str]]:
    """Turn leftover ``--key value`` / ``--key=value`` tokens into config overrides."""
    out = []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise CliError(EXIT_USAGE, "usage", f"unexpected argument {tok!r}")
        name = tok[2:]
        if "=" in name:
            name, value = name.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise CliError(EXIT_USAGE, "usage", f"option {tok} needs a value")
            value = tokens[i + 1]
            i += 2
        key = ALIASES.get(name, name)
        if "." not in key:
            raise CliError(EXIT_USAGE, "usage", f"unknown option --{name}")
        out.append((key, value))
    return out


def resolve_config(args, extra: Sequence[str], base_file: Optional[Path] = None) -> RunConfig:
    overrides = []
    if base_file is not None and base_file.is_file():
        overrides += read_config_file(base_file)
    if args.config:
        overrides += read_config_file(args.config)
    for item in args.set or []:
        if "=" not in item:
            raise CliError(EXIT_USAGE, "usage", f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides.append((k.strip(), v.strip()))
    overrides += split_overrides(extra)
    cfg = RunConfig.resolve(overrides=overrides)
    if cfg.run.scale == "paper":
        print(PAPER_SCALE_WARNING, file=sys.stderr)
    return cfg


def as_overrides(cfg: RunConfig) -> list[tuple[str, str]]:
    return [tuple(line.split(" = ", 1)) for line in cfg.resolved_text().splitlines()[1:]]


# ------------------------------------------------------------------ data


def load_data(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    d = cfg.data
    if d.source == "synthetic":
        return synthetic_splits(d.synthetic_spec(), d.test_per_class)
    directory = d.dir or default_data_dir()
    if not directory:
        raise DataError("no dataset directory: set data.dir (--data-dir) or UNIPOOL_DATA_DIR")
    if d.source == "cifar10":
        train_ds, test_ds = load_cifar10(directory)
    else:
        train_ds, test_ds = load_cifar_dir(directory, d.image_size)
    if d.train_per_class:
        train_ds = subset(train_ds, d.train_per_class, d.seed)
    if d.eval_per_class:
        test_ds = subset(test_ds, d.eval_per_class, d.seed)
    return train_ds, test_ds


def _epoch_line(m: Metrics) -> None:
    print(f"epoch {m.epoch:4d}  loss {m.train_loss:.5f}  train_top1 {m.train_top1:.4f}  "
          f"test_top1 {m.test_top1:.4f}  test_top5 {m.test_top5:.4f}  {m.wall_time:.1f}s", flush=True)


# ------------------------------------------------------------------ commands


def cmd_train(args, extra) -> int:
    cfg = resolve_config(args, extra)
    out = Path(cfg.run.out)
    cfg.write_resolved(out)
    set_precision(cfg.train.precision)
    train_ds, test_ds = load_data(cfg)
    if args.resume:
        model, _, state = load_checkpoint(args.resume)
        if state.epoch >= cfg.train.epochs:
            print(f"checkpoint already at epoch {state.epoch}; nothing to do")
            return EXIT_OK
    else:
        model = build_model(cfg.model_config(train_ds.num_classes, train_ds.image_shape), seed=cfg.train.seed)
        state = TrainState.fresh(cfg.train.seed)
    quiet = args.quiet
    train(model, train_ds, test_ds, cfg.train, state=state, out_dir=out,
          checkpoint_every=cfg.run.checkpoint_every, on_epoch=None if quiet else _epoch_line)
    print(f"wrote {out / 'metrics.csv'}")
    return EXIT_OK


def cmd_eval(args, extra) -> int:
    ckpt = Path(args.ckpt)
    cfg = resolve_config(args, extra, base_file=ckpt.parent / "config.resolved")
    set_precision(cfg.train.precision)
    model, _, _ = load_checkpoint(ckpt)
    train_ds, test_ds = load_data(cfg)
    ds = test_ds if args.split == "test" else train_ds
    res = evaluate(model, ds, cfg.train.batch_size)
    print(f"split={args.split} n={res.n} loss={res.loss:.6f} top1={res.top1:.4f} top5={res.top5:.4f}")
    return EXIT_OK


def cmd_gradcheck(args, extra) -> int:
    cfg = resolve_config(args, extra)
    set_precision(64)
    rng = np.random.default_rng(cfg.train.seed)
    size = args.input_size or cfg.data.image_size
    mcfg = cfg.model_config(cfg.data.num_classes, (3, size, size))
    model = build_model(mcfg, seed=cfg.train.seed)
    if args.perturb > 0:
        perturb_pooling(model, args.perturb, seed=cfg.train.seed)
    x = Tensor(rng.normal(size=(args.batch, 3, size, size)))
    y = rng.integers(0, cfg.data.num_classes, size=args.batch)
    rep = grad_check(model, x, y, tolerance=args.tolerance, n_samples=args.samples, seed=cfg.train.seed)
    print(f"arch={mcfg.architecture} local={mcfg.local_pool} global={mcfg.global_pool} "
          f"checked={rep.n_checked} skipped_at_kinks={rep.n_skipped} "
          f"max_rel_err={rep.max_rel_err:.3e} worst={rep.worst_param}[{rep.worst_index}] "
          f"tolerance={args.tolerance:g} {'PASS' if rep.passed else 'FAIL'}")
    if not rep.passed:
        raise CliError(EXIT_NUMERIC, "gradcheck",
                       f"max relative error {rep.max_rel_err:.3e} not below {args.tolerance:g}")
    return EXIT_OK


def cmd_analyze(args, extra) -> int:
    ckpt = Path(args.ckpt)
    cfg = resolve_config(args, extra, base_file=ckpt.parent / "config.resolved")
    with precision(64):
        model, _, _ = load_checkpoint(ckpt)
        _, test_ds = load_data(cfg)
        n = min(args.inputs, len(test_ds))
        if n < 2:
            raise AnalysisError(f"analysis needs at least 2 evaluation images, got {n}")
        if n < MIN_SENSITIVITY_INPUTS:
            print(f"warning: {n} evaluation images; sensitivity estimates want at least "
                  f"{MIN_SENSITIVITY_INPUTS}", file=sys.stderr)
        pick = np.sort(np.random.default_rng(cfg.data.seed).choice(len(test_ds), n, replace=False))
        sites = extract_weights(model, test_ds.images[pick])
    profiles = categorize_sites(sites, Thresholds(args.eps_u, args.eps_s))
    out = Path(cfg.run.out) / "analysis"
    out.mkdir(parents=True, exist_ok=True)
    table = format_summary(profiles)
    (out / "summary.txt").write_text(table + "\n")
    write_summary_csv(profiles, out / "summary.csv")
    written = [out / "summary.txt", out / "summary.csv"]
    if args.format in ("csv", "both"):
        written += export(sites, "csv", out)
    if args.format in ("pgm", "both"):
        written += export(sites, "pgm", out / "pgm", max_inputs=args.pgm_inputs)
    print(table)
    print(f"wrote {len(written)} files under {out}")
    return EXIT_OK


def cmd_synth(args, extra) -> int:
    cfg = resolve_config(args, extra)
    train_ds, test_ds = synthetic_splits(cfg.data.synthetic_spec(), cfg.data.test_per_class)
    paths = export_cifar_layout(train_ds, test_ds, cfg.run.out, args.train_files)
    cfg.write_resolved(cfg.run.out)
    print(f"wrote {len(train_ds)} train / {len(test_ds)} test images to {cfg.run.out} ({len(paths)} files)")
    return EXIT_OK


def _sweep_arch(arch: str, scale: str) -> str:
    if scale == "tiny" and arch in ("vgg", "resnet"):
        return f"tiny-{arch}"
    if scale == "paper" and arch.startswith("tiny-"):
        return arch[len("tiny-"):]
    return arch


def run_sweep_cell(overrides: list[tuple[str, str]]) -> list:
    """Train one (method, seed) cell; module-level so worker processes can run it."""
    cfg = RunConfig.resolve(overrides=overrides)
    out = Path(cfg.run.out)
    cfg.write_resolved(out)
    set_precision(cfg.train.precision)
    train_ds, test_ds = load_data(cfg)
    model = build_model(cfg.model_config(train_ds.num_classes, train_ds.image_shape), seed=cfg.train.seed)
    history = train(model, train_ds, test_ds, cfg.train, out_dir=out, checkpoint_every=0)
    last = history[-1]
    return [cfg.train.seed, cfg.train.epochs, f"{last.train_loss:.6f}", f"{last.train_top1:.6f}",
            f"{last.test_top1:.6f}", f"{last.test_top5:.6f}", f"{sum(m.wall_time for m in history):.3f}"]


def cmd_sweep(args, extra) -> int:
    if args.grid != "table3":
        raise CliError(EXIT_USAGE, "usage", f"unknown grid {args.grid!r} (available: table3)")
    if args.repeat < 1 or args.workers < 1:
        raise CliError(EXIT_USAGE, "usage", "--repeat and --workers must be positive")
    cfg = resolve_config(args, extra)
    root = Path(cfg.run.out)
    root.mkdir(parents=True, exist_ok=True)
    cfg.write_resolved(root)
    base_seed = cfg.train.seed
    arch = _sweep_arch(cfg.model.arch, cfg.run.scale)
    cells, labels = [], []
    for row in TABLE3_ROWS:
        for r in range(args.repeat):
            seed = base_seed + r
            overrides = as_overrides(cfg) + [
                ("model.arch", arch), ("pool.local", row.local), ("pool.global", row.global_),
                ("train.seed", str(seed)), ("run.out", str(root / row.indicator / f"seed{seed}")),
            ]
            cells.append(overrides)
            labels.append(row)
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(run_sweep_cell, cells))
    else:
        results = []
        for row, cell in zip(labels, cells):
            results.append(run_sweep_cell(cell))
            print(f"{row.indicator:>3} local={row.local:<14} global={row.global_:<14} seed={results[-1][0]} "
                  f"test_top1={results[-1][4]}", flush=True)
    table = root / "table3.csv"
    with table.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_HEADER)
        for row, res in zip(labels, results):
            w.writerow([row.indicator, row.local, row.global_] + res)
    summary = root / "table3_summary.csv"
    with summary.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_SUMMARY_HEADER)
        for row in TABLE3_ROWS:
            mine = [res for lab, res in zip(labels, results) if lab is row]
            test = np.array([float(res[4]) for res in mine])
            tr = np.array([float(res[3]) for res in mine])
            w.writerow([row.indicator, row.local, row.global_, len(mine), f"{test.mean():.6f}",
                        f"{test.std(ddof=1) if len(test) > 1 else 0.0:.6f}", f"{tr.mean():.6f}"])
    print(f"wrote {table} and {summary}")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False, allow_abbrev=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one configuration key")

    parser = _Parser(prog="unipool", allow_abbrev=False,
                     description="Universal pooling experiments: train, evaluate, check and analyze models.")
    parser.add_argument("--version", action="version", version=f"unipool {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train", parents=[common], allow_abbrev=False, help="train a model")
    p.add_argument("--resume", help="continue from a checkpoint")
    p.add_argument("--quiet", action="store_true", help="no per-epoch lines")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], allow_abbrev=False, help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common], allow_abbrev=False,
                       help="finite-difference check of backprop through a whole network (64-bit)")
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--samples", type=int, default=500, help="parameter entries to check (at most 2000)")
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--input-size", type=int, default=None,
                   help="side length of the random input images (default: data.image_size)")
    p.add_argument("--perturb", type=float, default=0.5,
                   help="std of noise added to pooling parameters first (0 keeps the initialization)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("analyze", parents=[common], allow_abbrev=False,
                       help="categorize learned pooling channels and export weight maps")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--inputs", type=int, default=MIN_SENSITIVITY_INPUTS, help="evaluation images")
    p.add_argument("--format", choices=("csv", "pgm", "both"), default="both")
    p.add_argument("--pgm-inputs", type=int, default=2, help="inputs per channel exported as images")
    p.add_argument("--eps-u", type=float, default=None, help="uniformity threshold (default 0.05*(1-1/S^2))")
    p.add_argument("--eps-s", type=float, default=0.1, help="sensitivity threshold")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("synth", parents=[common], allow_abbrev=False,
                       help="write the synthetic dataset in the CIFAR binary layout")
    p.add_argument("--train-files", type=int, default=1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sweep", parents=[common], allow_abbrev=False, help="run the V1-V6 / P1-P5 pooling grid")
    p.add_argument("--grid", default="table3")
    p.add_argument("--repeat", type=int, default=1, help="seeds per method")
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if args.command is None:
            parser.print_help()
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args, extra)
    except CliError as exc:
        return _report(exc.code, exc.kind, str(exc))
    except ConfigError as exc:
        return _report(EXIT_USAGE, "config", str(exc))
    except AnalysisError as exc:
        return _report(EXIT_USAGE, "analysis", str(exc))
    except (DataError, CheckpointError) as exc:
        return _report(EXIT_DATA, "data", str(exc))
    except (DivergenceError, FloatingPointError) as exc:
        return _report(EXIT_NUMERIC, "numerical", str(exc))
    except OSError as exc:
        return _report(EXIT_DATA, "io", str(exc))
    except ValueError as exc:
        return _report(EXIT_USAGE, "invalid", str(exc))


def _report(code: int, kind: str, message: str) -> int:
    print(f"ERROR:{code}:{kind}: {' '.join(message.split())}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
