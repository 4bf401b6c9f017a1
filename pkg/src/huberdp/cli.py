"""Command line interface: ``huberdp {gen,estimate,sweep,tune,plot}``.

Every verb accepts ``--config FILE`` with a JSON object whose keys are the
flag names (dashes as underscores). Precedence: built-in defaults < config
file < explicit flags.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
import tempfile
from pathlib import Path

from . import __version__
from .baseline import WmeConfig, wme_estimate
from .dataset import export_dataset, load_dataset
from .experiments import (
    DistributionSpec,
    ExperimentSpec,
    emit_csv,
    gen_balanced,
    gen_imbalanced,
    mse_sweep,
    read_csv,
    tune_hyperparameter,
)
from .mechanism import EstimatorConfig, estimate
from .plotting import emit_plot

logger = logging.getLogger("huberdp")


def _add_privacy(p):
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=1e-5)


def _add_cell(p, many: bool):
    nargs = "+" if many else None
    p.add_argument("--dist", required=False, default="uniform(-1,1)",
                   help="uniform(lo,hi), gaussian(mean,std), lomax(a) or exponential(rate)")
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--m", type=int, nargs=nargs, help="samples per user (balanced design)")
    p.add_argument("--N", type=int, help="total samples (power-law design)")
    p.add_argument("--gamma", type=float, nargs=nargs, help="power-law exponent")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int)
    p.add_argument("--k0", type=int, help="outlier-count horizon for imbalanced HLM")
    _add_privacy(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="huberdp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    parser.verbs = {}

    def verb(name, help_text):
        p = sub.add_parser(name, help=help_text)
        parser.verbs[name] = p
        p.add_argument("--config", type=Path, help="JSON file of flag values")
        p.add_argument("--out", type=Path, help="output path (default: stdout)")
        return p

    p = verb("gen", "generate a synthetic user-sharded dataset")
    p.add_argument("--dist", default="uniform(-1,1)")
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--m", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=["csv-long", "jsonl-shards"])

    p = verb("estimate", "private mean of a dataset file")
    p.add_argument("--data", type=Path, required=False)
    p.add_argument("--format", choices=["csv-long", "jsonl-shards"])
    p.add_argument("--method", choices=["hlm", "wme"], default="hlm")
    _add_privacy(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--radius", type=float, help="clipping radius R_c")
    p.add_argument("--bound-radius", type=float, help="support radius R (bounded regime)")
    p.add_argument("--regime", choices=["bounded", "heavy-tail"], default="bounded")
    p.add_argument("--p", type=float)
    p.add_argument("--moment", type=float, help="p-th moment bound M_p")
    p.add_argument("--c-t", type=float)
    p.add_argument("--mode", choices=["balanced", "imbalanced"], default="balanced")
    p.add_argument("--gamma", type=float)
    p.add_argument("--threshold", type=float)
    p.add_argument("--threshold-scale", type=float)
    p.add_argument("--k0", type=int)
    p.add_argument("--delta-method", choices=["greedy", "exact"], default="greedy")
    p.add_argument("--tau", type=float, help="WME concentration radius")
    p.add_argument("--range", type=float, nargs=2, metavar=("LO", "HI"), help="WME histogram range")

    p = verb("sweep", "MSE sweep over sizes or imbalance; writes the CSV table")
    _add_cell(p, many=True)
    p.add_argument("--methods", nargs="+", choices=["hlm", "wme"], default=["hlm", "wme"])
    p.add_argument("--param", type=float, help="fixed tuning constant (A for hlm, B for wme)")
    p.add_argument("--grid", type=float, nargs="+", default=[], help="tune the constant over this grid per cell")
    p.add_argument("--plot", nargs="?", const="auto", help="also render a figure (default: next to --out as .svg)")

    p = verb("tune", "grid-search the tuning constant for one cell")
    _add_cell(p, many=False)
    p.add_argument("--method", choices=["hlm", "wme"], default="hlm")
    p.add_argument("--grid", type=float, nargs="+", required=False)

    p = verb("plot", "render a sweep CSV as a log-log figure")
    p.add_argument("--csv", type=Path, required=False)
    p.add_argument("--title")
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        doc = json.loads(args.config.read_text())
        if not isinstance(doc, dict):
            parser.error("config file must hold a JSON object")
        sub = parser.verbs[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(doc) - known
        if unknown:
            parser.error(f"unknown config keys: {sorted(unknown)}")
        sub.set_defaults(**doc)
        args = parser.parse_args(argv)
    return args


def _write(text: str, out):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _require(value, flag):
    if value is None:
        raise ValueError(f"{flag} is required")
    return value


def cmd_gen(args):
    dist = DistributionSpec.parse(args.dist, args.d)
    if args.m is not None:
        ds = gen_balanced(dist, args.n, args.m, args.seed)
    else:
        ds = gen_imbalanced(dist, args.n, _require(args.N, "--N"), _require(args.gamma, "--gamma"), args.seed)
    if args.out is None:
        fmt = args.format or "csv-long"
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / ("data.jsonl" if fmt == "jsonl-shards" else "data.csv")
            export_dataset(ds, path, fmt)
            sys.stdout.write(path.read_text())
    else:
        export_dataset(ds, args.out, args.format)


def cmd_estimate(args):
    _require(args.seed, "--seed")
    ds = load_dataset(_require(args.data, "--data"), args.format)
    if args.method == "wme":
        cfg = WmeConfig(args.epsilon, args.delta, _require(args.tau, "--tau"),
                        tuple(_require(args.range, "--range")), seed=args.seed)
        result = wme_estimate(ds, cfg)
    else:
        cfg = EstimatorConfig(
            epsilon=args.epsilon, delta=args.delta, radius=args.radius, regime=args.regime,
            bound_radius=args.bound_radius, p=args.p, moment=args.moment, c_t=args.c_t, mode=args.mode,
            gamma=args.gamma, threshold=args.threshold, threshold_scale=args.threshold_scale, k0=args.k0,
            delta_method=args.delta_method, seed=args.seed,
        )
        result = estimate(ds, cfg)
    _write(json.dumps(result.to_dict(), indent=2) + "\n", args.out)


def _cells(args, methods):
    dist = DistributionSpec.parse(args.dist, args.d)
    common = dict(n=args.n, trials=args.trials, seed=_require(args.seed, "--seed"),
                  epsilon=args.epsilon, delta=args.delta, k0=args.k0)
    ms = args.m if isinstance(args.m, list) else ([args.m] if args.m is not None else [])
    gammas = args.gamma if isinstance(args.gamma, list) else ([args.gamma] if args.gamma is not None else [])
    if bool(ms) == bool(gammas):
        raise ValueError("give either --m or --N with --gamma")
    specs = []
    for method in methods:
        if ms:
            specs += [ExperimentSpec(dist, method=method, m=m, **common) for m in ms]
        else:
            N = _require(args.N, "--N")
            specs += [ExperimentSpec(dist, method=method, N=N, gamma=g, **common) for g in gammas]
    return specs


def cmd_sweep(args):
    specs = [s.with_param(args.param) for s in _cells(args, args.methods)]
    if args.grid:
        specs = [dataclasses.replace(s, tuning_grid=tuple(args.grid)) for s in specs]
    rows = mse_sweep(specs)
    text = emit_csv(rows, args.out)
    if args.out is None:
        sys.stdout.write(text)
    if args.plot:
        if args.plot == "auto":
            plot_path = _require(args.out, "--out (for --plot without a path)").with_suffix(".svg")
        else:
            plot_path = Path(args.plot)
        emit_plot(rows, plot_path)
    failed = [r for r in rows if r.error]
    if failed:
        raise RuntimeError(f"{len(failed)} cell(s) failed; see the NaN rows")


def cmd_tune(args):
    spec = _cells(args, [args.method])[0]
    result = tune_hyperparameter(spec, _require(args.grid, "--grid"))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["param", "mse_mean", "mse_stderr", "mse_median", "best"])
    for value, mean, se, med in result.table:
        w.writerow([repr(value), repr(mean), repr(se), repr(med), int(value == result.best)])
    _write(buf.getvalue(), args.out)


def cmd_plot(args):
    rows = read_csv(_require(args.csv, "--csv"))
    out = args.out if args.out is not None else args.csv.with_suffix(".svg")
    emit_plot(rows, out, args.title)


COMMANDS = {"gen": cmd_gen, "estimate": cmd_estimate, "sweep": cmd_sweep, "tune": cmd_tune, "plot": cmd_plot}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
