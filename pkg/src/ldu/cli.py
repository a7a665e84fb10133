"""Command line entry point.

    ldu train <config> [--seed S | --seeds N] [--out DIR]
    ldu eval <config> --checkpoint PATH [--seed S] [--out DIR]
    ldu sweep <config> --axis {lambda,prototypes,losses} [--values ...] [--seeds N] [--out DIR]
    ldu plot <artifacts-dir>

Relative output directories resolve under ``$LDU_OUTPUT_ROOT`` when it is set.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentSpec, parse_config
from .datasets import DatasetFormatError
from .experiments import SWEEP_AXES, evaluate, make_data, run_experiment, run_sweep, with_seed
from .metrics import METRIC_COLUMNS, write_metrics_csv
from .model import load_checkpoint
from .plots import PlotInputError, emit_plots

log = logging.getLogger("ldu")


def _seeds(args, spec: ExperimentSpec) -> list[int]:
    if args.seed is not None:
        return [args.seed]
    if args.seeds is not None:
        if args.seeds < 1:
            raise ConfigError("--seeds must be >= 1")
        return list(range(args.seeds))
    return list(spec.seeds)


def _out(args, spec: ExperimentSpec) -> Path:
    if args.out is not None:
        return Path(args.out)
    return spec.resolved_output_dir() / spec.name


def cmd_train(args) -> int:
    spec = parse_config(args.config)
    out = _out(args, spec)
    res = run_experiment(spec, out, _seeds(args, spec))
    print(f"wrote {out / 'metrics.csv'}")
    m = res.mean
    for key in ("accuracy", "ece", "auroc", "ause_rmse"):
        v = getattr(m, key)
        if v is not None:
            print(f"  mean {key}: {v:.4f}")
    return 0


def cmd_eval(args) -> int:
    spec = parse_config(args.config)
    seed = args.seed if args.seed is not None else spec.seeds[0]
    model = load_checkpoint(args.checkpoint)
    s_spec = with_seed(spec, seed)
    _, test, ood = make_data(s_spec, seed)
    report = evaluate(model, s_spec, test, ood, seed)
    if args.out is not None:
        path = write_metrics_csv([report], Path(args.out) / "metrics.csv")
        print(f"wrote {path}")
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        w.writerow(report.row())
    return 0


def cmd_sweep(args) -> int:
    spec = parse_config(args.config)
    out = _out(args, spec) if args.out is not None else spec.resolved_output_dir() / f"{spec.name}-sweep-{args.axis}"
    rows = run_sweep(spec, args.axis, args.values, out, _seeds(args, spec))
    failed = sorted({v for _, v, status, _ in rows if status != "ok"})
    print(f"wrote {out / 'sweep.csv'} ({len(rows)} rows)")
    if failed:
        print(f"failed points: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_plot(args) -> int:
    for path in emit_plots(args.dir):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ldu", description="Train and evaluate LDU prototype-uncertainty models.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seeds=True):
        sp.add_argument("config", help="YAML experiment configuration")
        sp.add_argument("--seed", type=int, help="run a single seed")
        if seeds:
            sp.add_argument("--seeds", type=int, help="run seeds 0..N-1")
        sp.add_argument("--out", help="output directory (overrides the config)")

    t = sub.add_parser("train", help="train, evaluate and write artifacts for every seed")
    common(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a saved checkpoint on the configured test and OOD sets")
    common(e, seeds=False)
    e.add_argument("--checkpoint", required=True, help="checkpoint.json written by train")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="run one experiment per grid point along an axis")
    common(s)
    s.add_argument("--axis", required=True, choices=SWEEP_AXES)
    s.add_argument("--values", nargs="+", help="grid points (default: the standard grid for the axis)")
    s.set_defaults(func=cmd_sweep)

    pl = sub.add_parser("plot", help="render SVG figures from a run directory")
    pl.add_argument("dir", help="artifacts directory (a run or a single seed)")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DatasetFormatError, PlotInputError, FileNotFoundError, ValueError) as exc:
        print(f"ldu: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report any stage failure as a diagnostic
        print(f"ldu: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
