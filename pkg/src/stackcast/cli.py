"""``stackcast`` command line entry point.

Exit codes: 0 on success, 2 for bad input (flags, files, data), 3 when the
numerics break down. A fit that hits ``--max-iters`` still exits 0; the
trace records ``converged=false``.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import data_io
from .errors import DomainError, IngestionError, RunError
from .estimator import DEFAULT_MAX_ITERS, DEFAULT_TOL, PriorSchedule, fit_em, fit_vi
from .evaluation import DEFAULT_RESAMPLES, paired_differences, permutation_pvalue, prior_sweep
from .season import final_score_matrix, run_adaptive, run_equal, run_static
from .synthetic import (
    RevisionModel,
    SyntheticScenario,
    generate,
    revision_sweep_scenario,
    separated_templates,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


def _rho(text: str) -> float:
    x = float(text)
    if not 0.0 <= x <= 1.0:
        raise argparse.ArgumentTypeError(f"rho must lie in [0, 1], got {text}")
    return x


def _positive_int(text: str) -> int:
    x = int(text)
    if x < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return x


def parse_grid(text: str) -> list[float]:
    """``lo:hi:step`` in percent, both ends inclusive, returned as fractions."""
    try:
        lo, hi, step = (float(p) for p in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like lo:hi:step, got {text!r}") from None
    if step <= 0 or hi < lo or lo < 0 or hi > 100:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}: need 0 <= lo <= hi <= 100, step > 0")
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return [round((lo + k * step) / 100.0, 12) for k in range(n)]


def _pi(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--pi takes comma-separated weights, got {text!r}") from None


def _add_season(p):
    p.add_argument("forecasts", help="forecast CSV")
    p.add_argument("truth", help="truth snapshot CSV")
    p.add_argument("--season", default="season", help="season label stored with the run")


def _add_fit_flags(p, rho_default=0.0):
    p.add_argument("--rho", type=_rho, default=rho_default, help="prior fraction in [0, 1]")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--max-iters", type=_positive_int, default=DEFAULT_MAX_ITERS)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stackcast", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit weights on a season's final score matrix")
    _add_season(p)
    p.add_argument("--method", choices=("em", "vi"), default="em")
    _add_fit_flags(p)
    p.add_argument("--out", required=True, help="weights CSV")
    p.add_argument("--trace", help="objective path CSV")

    p = sub.add_parser("adaptive", help="weekly refit on data seen so far")
    _add_season(p)
    _add_fit_flags(p)
    p.add_argument("--warm-start", action="store_true")
    p.add_argument("--out", required=True, help="run file")

    p = sub.add_parser("static", help="weights trained on past seasons, then frozen")
    _add_season(p)
    p.add_argument("--train", nargs=2, action="append", required=True,
                   metavar=("FORECASTS", "TRUTH"), help="a past season; repeat for more")
    _add_fit_flags(p)
    p.add_argument("--out", required=True, help="run file")

    p = sub.add_parser("equal", help="uniform weights every week")
    _add_season(p)
    p.add_argument("--out", required=True, help="run file")

    p = sub.add_parser("sweep", help="adaptive runs over a grid of prior fractions")
    _add_season(p)
    p.add_argument("--grid", type=parse_grid, default=parse_grid("0:100:1"),
                   help="lo:hi:step in percent (default 0:100:1)")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--max-iters", type=_positive_int, default=DEFAULT_MAX_ITERS)
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--out", required=True, help="rho,mean_logscore CSV")
    p.add_argument("--series", help="also write a whitespace-separated series for gnuplot")

    p = sub.add_parser("compare", help="paired score differences between two runs")
    p.add_argument("run_a")
    p.add_argument("run_b")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--resamples", type=_positive_int, default=DEFAULT_RESAMPLES)
    p.add_argument("--out", required=True, help="per-key difference CSV")
    p.add_argument("--pvalues", help="per-stratum mean and p-value CSV")

    p = sub.add_parser("synth", help="draw a synthetic season")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--scenario", choices=("mixture", "sweep"), default="mixture",
                   help="separated components with --pi, or the revision-noise sweep season")
    p.add_argument("--pi", type=_pi, default=(0.5, 0.3, 0.2))
    p.add_argument("--weeks", type=_positive_int, help="default 30")
    p.add_argument("--locations", type=_positive_int,
                   help="default 1 (mixture) or 2 (sweep)")
    p.add_argument("--revision-scale", type=int, help="default 0 (mixture) or 20 (sweep)")
    p.add_argument("--revision-lag", type=int, help="default 0 (mixture) or 8 (sweep)")
    p.add_argument("--floor", type=float, default=0.0,
                   help="probability spread uniformly over the grid by each component")
    return ap


def _fit(args) -> int:
    season = data_io.load_season(args.forecasts, args.truth, args.season)
    scores = final_score_matrix(season)
    if scores.num_obs == 0:
        raise RunError("no scorable observations in the final truth snapshot")
    if args.method == "em":
        trace = fit_em(scores, tol=args.tol, max_iters=args.max_iters)
    else:
        schedule = PriorSchedule(args.rho, scores.num_models)
        trace = fit_vi(scores, schedule, tol=args.tol, max_iters=args.max_iters)
    data_io.save_weights(args.out, trace.final_weights)
    if args.trace:
        data_io.save_trace(args.trace, trace)
    if not trace.converged:
        print(f"warning: stopped after {trace.iterations} iterations without converging",
              file=sys.stderr)
    return EXIT_OK


def _adaptive(args) -> int:
    season = data_io.load_season(args.forecasts, args.truth, args.season)
    run = run_adaptive(season, args.rho, tol=args.tol, max_iters=args.max_iters,
                       warm_start=args.warm_start)
    data_io.save_run(run, args.out)
    stalled = [w for w, t in run.traces.items() if not t.converged]
    if stalled:
        print(f"warning: fits for weeks {stalled} stopped without converging", file=sys.stderr)
    return EXIT_OK


def _static(args) -> int:
    season = data_io.load_season(args.forecasts, args.truth, args.season)
    past = [data_io.load_season(f, t, f"train{k}") for k, (f, t) in enumerate(args.train)]
    run = run_static(past, season, rho=args.rho, tol=args.tol, max_iters=args.max_iters)
    data_io.save_run(run, args.out)
    return EXIT_OK


def _equal(args) -> int:
    season = data_io.load_season(args.forecasts, args.truth, args.season)
    data_io.save_run(run_equal(season), args.out)
    return EXIT_OK


def _sweep(args) -> int:
    season = data_io.load_season(args.forecasts, args.truth, args.season)
    result = prior_sweep(season, args.grid, tol=args.tol, max_iters=args.max_iters,
                         workers=args.workers)
    data_io.save_table(args.out, ("rho", "mean_logscore"), result.rows())
    if args.series:
        with open(args.series, "w", encoding="utf-8") as fh:
            fh.write(f"# rho mean_logscore (argmax {data_io.fmt_float(result.argmax_rho)})\n")
            for rho, score in result.rows():
                fh.write(f"{data_io.fmt_float(rho)} {data_io.fmt_float(score)}\n")
    print(f"argmax rho = {result.argmax_rho:g}")
    return EXIT_OK


def _compare(args) -> int:
    diffs = paired_differences(data_io.load_run(args.run_a), data_io.load_run(args.run_b))
    data_io.save_table(args.out, ("season", "location", "target", "epiweek", "diff"),
                       diffs.entries)
    if args.pvalues:
        pvals = permutation_pvalue(diffs, args.resamples, args.seed)
        means = diffs.stratum_means() if len(diffs) else {}
        rows = [(dim, "" if v is None else v, means.get((dim, v), ""),
                 "NA" if p is None else p)
                for (dim, v), p in pvals.items()]
        data_io.save_table(args.pvalues, ("stratum", "value", "mean_diff", "p_value"), rows)
    print(f"{len(diffs)} paired keys, mean difference {diffs.mean():.6g}")
    return EXIT_OK


def _synth(args) -> int:
    def pick(value, default):
        return default if value is None else value

    sweep = args.scenario == "sweep"
    weeks_ = pick(args.weeks, 30)
    revision = RevisionModel(pick(args.revision_scale, 20 if sweep else 0),
                             pick(args.revision_lag, 8 if sweep else 0))
    if sweep:
        scenario = revision_sweep_scenario(args.seed, weeks_, pick(args.locations, 2), revision)
    else:
        scenario = SyntheticScenario(
            true_pi=args.pi,
            templates=separated_templates(len(args.pi), floor=args.floor),
            weeks=weeks_,
            revision=revision,
            seed=args.seed,
            locations=tuple(f"L{i + 1}" for i in range(pick(args.locations, 1))),
        )
    paths = generate(scenario).write(Path(args.out_dir))
    for name, path in paths.items():
        print(f"{name}: {path}")
    return EXIT_OK


_COMMANDS = {
    "fit": _fit,
    "adaptive": _adaptive,
    "static": _static,
    "equal": _equal,
    "sweep": _sweep,
    "compare": _compare,
    "synth": _synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ArithmeticError as exc:
        print(f"stackcast: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DomainError, IngestionError, RunError, OSError, ValueError) as exc:
        print(f"stackcast: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
