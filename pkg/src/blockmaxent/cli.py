"""Command-line interface.

Exit codes: 0 success, 1 input error (including usage), 2 numerical failure.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import sys

from . import exact as ex
from .errors import InputError, NumericalError, UnstableSystem
from .experiments import (
    COMPARE_COLUMNS,
    SWEEP_COLUMNS,
    SweepSpec,
    compare_run,
    example_spec,
    fmt,
    run_sweep,
    trend_check,
    write_csv,
    write_json_lines,
)
from .maxent import constraint_residuals, entropy_closed_form, entropy_direct, maxent_distribution
from .model import Params, stability_check, validate_params
from .simulation import SimConfig, simulate

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2

MAXENT_COLUMNS = [
    "I", "J", "b", "y", "z", "x", "beta0", "beta1", "beta2",
    "H_maxent", "r_norm", "r_I", "r_J", "iterations", "degenerate",
]
SOLVE_COLUMNS = ["lambda", "mu1", "mu2", "b", "jmax", "I", "J", "H_exact", "tail_exact", "residual"]
SIM_COLUMNS = ["lambda", "mu1", "mu2", "b", "seed", "horizon", "I_hat", "I_se", "J_hat", "J_se",
               "n_events", "stable"]
STABILITY_COLUMNS = ["lambda", "mu1", "mu2", "b", "bound", "stable", "margin"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _add_output(p):
    p.add_argument("--out", help="write to this path instead of standard output")
    p.add_argument("--json", action="store_true", help="emit JSON lines instead of CSV")


def _add_params(p, required=True):
    p.add_argument("--lambda", dest="lam", type=float, required=required, help="arrival rate")
    p.add_argument("--mu1", type=float, required=required, help="block-generation rate")
    p.add_argument("--mu2", type=float, required=required, help="blockchain-building rate")
    p.add_argument("--b", type=int, required=required, help="maximum block size")


def _add_numeric(p):
    p.add_argument("--tail-eps", type=float, default=ex.DEFAULT_TAIL_EPS,
                   help="boundary mass tolerance for truncation (default %(default)g)")
    p.add_argument("--tol", type=float, default=1e-12,
                   help="relative tolerance of the y root (default %(default)g)")
    p.add_argument("--jmax", type=int, default=None,
                   help="fixed pool truncation level (default: doubling search)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="blockmaxent",
        description="Exact, simulated and maximum-entropy steady state of a two-stage blockchain queue.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("stability", help="check the stability condition")
    _add_params(p)
    _add_output(p)

    p = sub.add_parser("solve", help="exact stationary distribution and moments")
    _add_params(p)
    _add_numeric(p)
    _add_output(p)
    p.add_argument("--table", help="also write the full p(i,j) table as CSV to this path")
    p.add_argument("--dump-generator", help="write generator triplets 'i:j k:l rate' to this path")

    p = sub.add_parser("simulate", help="discrete-event simulation estimates of I and J")
    _add_params(p)
    _add_output(p)
    p.add_argument("--horizon", type=float, default=1e5)
    p.add_argument("--warmup", type=float, default=None)
    p.add_argument("--batches", type=int, default=20)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])

    p = sub.add_parser("maxent", help="product-form approximation from (I, J, b) or model parameters")
    p.add_argument("--I", dest="I", type=float, help="mean transactions in the block")
    p.add_argument("--J", dest="J", type=float, help="mean transactions in the pool")
    p.add_argument("--moments", help="CSV file with columns I, J, b (one solution per row)")
    _add_params(p, required=False)
    _add_numeric(p)
    _add_output(p)

    p = sub.add_parser("compare", help="exact vs maxent vs simulation at one parameter point")
    _add_params(p)
    _add_numeric(p)
    _add_output(p)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--horizon", type=float, default=1e6)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("sweep", help="parameter sweep (worked examples or a spec file)")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--example", type=int, choices=(1, 2, 3))
    g.add_argument("--spec", help="JSON sweep spec file")
    _add_numeric(p)
    _add_output(p)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-timing", action="store_true",
                   help="leave the ms column empty (byte-reproducible output)")
    p.add_argument("--trends", action="store_true",
                   help="print monotone-trend verdicts for y and z to standard error")
    return parser


@contextlib.contextmanager
def _sink(path):
    if path:
        with open(path, "w", newline="") as fh:
            yield fh
    else:
        yield sys.stdout


def _emit(args, rows, columns):
    with _sink(args.out) as fh:
        if args.json:
            write_json_lines(rows, fh)
        else:
            write_csv(rows, columns, fh)


def _params(args) -> Params:
    return validate_params(Params(args.lam, args.mu1, args.mu2, args.b))


def _cmd_stability(args):
    p = _params(args)
    r = stability_check(p)
    row = {"lambda": p.lam, "mu1": p.mu1, "mu2": p.mu2, "b": p.b,
           "bound": r.bound, "stable": r.stable, "margin": r.margin}
    if args.out or args.json:
        _emit(args, [row], STABILITY_COLUMNS)
    else:
        print(f"bound={fmt(r.bound)} stable={fmt(r.stable)} margin={fmt(r.margin)}")
    return EXIT_OK


def _cmd_solve(args):
    p = _params(args)
    d = ex.solve_params(p, jmax=args.jmax, tail_eps=args.tail_eps)
    m = ex.moments(d)
    if args.dump_generator:
        ex.dump_generator(ex.build_generator(p, d.jmax), args.dump_generator)
    if args.table:
        with open(args.table, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(["i", "j", "p"])
            for i in range(d.b + 1):
                for j in range(d.jmax + 1):
                    w.writerow([i, j, fmt(d.probs[i, j])])
    row = {"lambda": p.lam, "mu1": p.mu1, "mu2": p.mu2, "b": p.b, "jmax": d.jmax,
           "I": m.I, "J": m.J, "H_exact": entropy_direct(d),
           "tail_exact": d.tail_mass_estimate, "residual": d.residual}
    _emit(args, [row], SOLVE_COLUMNS)
    return EXIT_OK


def _cmd_simulate(args):
    p = _params(args)
    rows = []
    for seed in args.seeds:
        cfg = SimConfig(horizon=args.horizon, warmup=args.warmup, n_batches=args.batches, seed=seed)
        e = simulate(p, cfg)
        rows.append({"lambda": p.lam, "mu1": p.mu1, "mu2": p.mu2, "b": p.b, "seed": seed,
                     "horizon": args.horizon, "I_hat": e.I_hat, "I_se": e.I_se,
                     "J_hat": e.J_hat, "J_se": e.J_se, "n_events": e.n_events, "stable": e.stable})
    _emit(args, rows, SIM_COLUMNS)
    return EXIT_OK


def _maxent_row(I, J, b, tol):
    s = maxent_distribution(I, J, b, tol)
    r = constraint_residuals(s)
    return {"I": I, "J": J, "b": b, "y": s.y, "z": s.z, "x": s.x,
            "beta0": s.beta0, "beta1": s.beta1, "beta2": s.beta2,
            "H_maxent": entropy_closed_form(s), "r_norm": r[0], "r_I": r[1], "r_J": r[2],
            "iterations": s.iterations, "degenerate": ";".join(s.degenerate)}


def _cmd_maxent(args):
    model = [args.lam, args.mu1, args.mu2]
    rows = []
    if args.moments:
        try:
            with open(args.moments, newline="") as fh:
                triples = [(float(r["I"]), float(r["J"]), int(r["b"])) for r in csv.DictReader(fh)]
        except (OSError, KeyError, ValueError) as exc:
            raise InputError(f"cannot read moments file: {exc}") from exc
        rows = [_maxent_row(I, J, b, args.tol) for I, J, b in triples]
    elif args.I is not None or args.J is not None:
        if args.I is None or args.J is None or args.b is None:
            raise InputError("--I, --J and --b are required together")
        rows = [_maxent_row(args.I, args.J, args.b, args.tol)]
    elif all(v is not None for v in model) and args.b is not None:
        p = _params(args)
        d = ex.solve_params(p, jmax=args.jmax, tail_eps=args.tail_eps)
        m = ex.moments(d)
        rows = [_maxent_row(m.I, m.J, p.b, args.tol)]
    else:
        raise InputError("give --I/--J/--b, --moments, or --lambda/--mu1/--mu2/--b")
    _emit(args, rows, MAXENT_COLUMNS)
    return EXIT_OK


def _cmd_compare(args):
    p = _params(args)
    try:
        rec = compare_run(p, args.seeds, args.horizon, jmax=args.jmax, tail_eps=args.tail_eps,
                          tol=args.tol, workers=args.workers)
    except UnstableSystem as exc:
        r = exc.report
        print(f"rejected: bound={fmt(r.bound)} stable=false margin={fmt(r.margin)}", file=sys.stderr)
        return EXIT_INPUT
    if args.json:
        with _sink(args.out) as fh:
            write_json_lines([rec.to_json()], fh)
    else:
        _emit(args, [rec.row()], COMPARE_COLUMNS)
    return EXIT_OK


def _cmd_sweep(args):
    overrides = {"tail_eps": args.tail_eps, "tol": args.tol, "jmax": args.jmax}
    if args.example:
        spec = example_spec(args.example, **overrides)
    else:
        spec = SweepSpec.from_file(args.spec)
    table = run_sweep(spec, workers=args.workers)
    timing = not args.no_timing
    if args.json:
        with _sink(args.out) as fh:
            write_json_lines((r.to_json(timing) for r in table), fh)
    else:
        _emit(args, [r.row(timing) for r in table], SWEEP_COLUMNS)
    if args.trends:
        for response in ("y", "z"):
            for line in trend_check(table, response).lines():
                print(line, file=sys.stderr)
    return EXIT_OK


COMMANDS = {
    "stability": _cmd_stability,
    "solve": _cmd_solve,
    "simulate": _cmd_simulate,
    "maxent": _cmd_maxent,
    "compare": _cmd_compare,
    "sweep": _cmd_sweep,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: --help exits 0, usage errors EXIT_INPUT
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main():
    sys.exit(run_cli())
