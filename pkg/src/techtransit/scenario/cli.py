"""Command line: run, oracle, experiment and validate subcommands.

Exit codes: 0 success, 2 configuration error, 3 stability abort,
4 constraint infeasibility.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from pathlib import Path

from ..constraints import ConstraintError
from ..core import DomainError
from ..dynamics import INTEGRATORS, StabilityError
from ..micro import tally_table
from ..preference import PreferenceError
from .config import ScenarioError, load_scenario
from .experiments import hysteresis_experiment, ladder_experiment, oracle_comparison, pulse_driver
from .output import FORMATS, emit, fmt

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STABILITY = 3
EXIT_CONSTRAINT = 4

log = logging.getLogger("techtransit")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _write(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _table(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _figures(args, fn, *a) -> None:
    if args.figures:
        from . import plots

        for p in getattr(plots, fn)(*a):
            log.info("wrote %s", p)


def cmd_run(args) -> int:
    sc = load_scenario(args.scenario)
    changes = {k: v for k, v in (("dt", args.dt), ("horizon", args.horizon), ("scale", args.scale),
                                 ("integrator", args.integrator)) if v is not None}
    if changes:
        sc = sc.with_run(**changes)
    from .runner import run

    traj = run(sc)
    text = emit(traj, None, args.format)
    _write(text, args.output)
    _figures(args, "plot_trajectory", traj, args.figures, sc.name)
    return EXIT_OK


def cmd_oracle(args) -> int:
    sc = load_scenario(args.scenario)
    res = oracle_comparison(sc, args.seeds, args.granularity, args.years)
    rep = res.report
    rows = []
    for y in rep.years:
        for k, tid in enumerate(res.ids):
            rows.append([int(y), tid, fmt(rep.mean[y, k]), fmt(rep.ci_half_width[y, k]), fmt(rep.meanfield[y, k]),
                         fmt(rep.mean[y, k] - rep.meanfield[y, k])])
    _write(_table(["year", "tech", "micro_mean", "ci95", "meanfield", "diff"], rows), args.output)
    if args.tally:
        Path(args.tally).write_text(tally_table(res.tallies, res.ids))
    print(f"max |micro - meanfield| = {rep.max_abs_diff:.6g} over {rep.n_runs} seeds", file=sys.stderr)
    _figures(args, "plot_oracle", rep, res.ids, args.figures, f"{sc.name}_oracle")
    return EXIT_OK


def cmd_ladder(args) -> int:
    sc = load_scenario(args.scenario)
    res = ladder_experiment(sc, args.ramps)
    rows = []
    for r in res.runs:
        for tid in r.unimodal:
            rows.append([fmt(r.ramp), tid, int(r.unimodal[tid]), fmt(r.peak_width[tid]), fmt(r.peak_time[tid]),
                         fmt(res.decline_bound[tid])])
    _write(_table(["ramp", "tech", "unimodal", "peak_width", "peak_time", "decline_bound"], rows), args.output)
    _figures(args, "plot_ladder", res, args.figures, sc.name)
    return EXIT_OK


def cmd_hysteresis(args) -> int:
    sc = load_scenario(args.scenario)
    driver = sc.driver
    if args.pulse is not None:
        driver = pulse_driver(sc.run.start, sc.run.end, args.pulse, args.peak, sc.driver(sc.run.start))
    res = hysteresis_experiment(sc, driver)
    rows = [
        ["alpha_start", fmt(res.pulse.avg_efficiency[0] if len(res.pulse) else float("nan"))],
        ["alpha_end", fmt(res.pulse.avg_efficiency[-1] if len(res.pulse) else float("nan"))],
        ["alpha_end_control", fmt(res.control.avg_efficiency[-1] if len(res.control) else float("nan"))],
        ["metric", fmt(res.metric)],
        ["raw_change", fmt(res.raw_change)],
        ["improved", int(res.improved)],
        ["retired_stay_out", int(res.retired_stay_out)],
        ["pulse_end", fmt(res.pulse_end)],
    ]
    _write(_table(["quantity", "value"], rows), args.output)
    if args.trajectory:
        emit(res.pulse, args.trajectory)
    _figures(args, "plot_hysteresis", res, args.figures, sc.name)
    return EXIT_OK


def cmd_validate(args) -> int:
    sc = load_scenario(args.scenario)
    print(f"ok: {sc.name}, {len(sc.fleet)} technologies, {sc.run.steps} steps, "
          f"{len(sc.constraints)} constraints")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="techtransit", description="Technology substitution dynamics.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="integrate a scenario and write the trajectory table")
    r.add_argument("scenario")
    r.add_argument("--dt", type=float)
    r.add_argument("--horizon", type=float)
    r.add_argument("--scale", type=float, help="time scaling factor k")
    r.add_argument("--integrator", choices=INTEGRATORS)
    r.add_argument("--output", "-o", help="output file (default: stdout)")
    r.add_argument("--format", choices=FORMATS, default="csv")
    r.add_argument("--figures", metavar="DIR", help="also render figures into DIR")
    r.set_defaults(func=cmd_run)

    o = sub.add_parser("oracle", help="compare the unit-level simulation with the mean-field equations")
    o.add_argument("scenario")
    o.add_argument("--seeds", type=int, default=30)
    o.add_argument("--granularity", type=float, help="capacity per unit (default: total / 10^4)")
    o.add_argument("--years", type=int, help="number of yearly epochs (default: horizon)")
    o.add_argument("--output", "-o")
    o.add_argument("--tally", metavar="PATH", help="write the first seed's yearly tally table")
    o.add_argument("--figures", metavar="DIR")
    o.set_defaults(func=cmd_oracle)

    e = sub.add_parser("experiment", help="ladder or hysteresis experiment")
    esub = e.add_subparsers(dest="experiment", required=True)
    lad = esub.add_parser("ladder", help="driver ramp family")
    lad.add_argument("scenario")
    lad.add_argument("--ramps", type=_floats, default=[0.0, 0.04, 10.0], help="comma-separated ramp rates")
    lad.add_argument("--output", "-o")
    lad.add_argument("--figures", metavar="DIR")
    lad.set_defaults(func=cmd_ladder)
    hy = esub.add_parser("hysteresis", help="driver excursion against a baseline control")
    hy.add_argument("scenario")
    hy.add_argument("--pulse", type=_floats, metavar="T1,T2,T3,T4",
                    help="pulse corner times (default: the scenario's driver table)")
    hy.add_argument("--peak", type=float, default=1.0, help="pulse height above baseline")
    hy.add_argument("--output", "-o")
    hy.add_argument("--trajectory", metavar="PATH", help="write the pulse-run trajectory table")
    hy.add_argument("--figures", metavar="DIR")
    hy.set_defaults(func=cmd_hysteresis)

    v = sub.add_parser("validate", help="load and check a scenario file")
    v.add_argument("scenario")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except BrokenPipeError:
        # reader went away (e.g. piped into head); silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK
    except StabilityError as exc:
        print(f"stability error: {exc}", file=sys.stderr)
        return EXIT_STABILITY
    except ConstraintError as exc:
        print(f"constraint error: {exc}", file=sys.stderr)
        return EXIT_CONSTRAINT
    except (ScenarioError, PreferenceError, DomainError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
