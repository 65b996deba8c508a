"""Command line interface: ``ridge-apm {fit,report,trace,correlate,simulate,summarize}``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .design import ColumnKind, Partition
from .lambda_select import SelectionConfig, lambda_grid, select_lambda
from .rating import read_ratings_csv
from .report import (
    ALL_PARTITIONS,
    ALL_STATS,
    FitError,
    RunConfig,
    build_problem,
    centered,
    consistency_study,
    format_table,
    leaderboard,
    load_records,
    run_fit,
    trace_curve_report,
    write_consistency_csv,
)
from .shiftlog import ShiftLogError, Stat, partition, summarize_shifts
from .simgen import SimConfig, simulate, write_simulation

log = logging.getLogger("ridge_apm")

EXIT_OK = 0
EXIT_INPUT = 3
EXIT_NUMERIC = 4
EXIT_CONFIG = 5
EXIT_OTHER = 1


def _stats(text: str) -> tuple[Stat, ...]:
    if text == "all":
        return ALL_STATS
    try:
        return tuple(Stat.parse(t) for t in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _partitions(text: str) -> tuple[Partition, ...]:
    if text == "all":
        return ALL_PARTITIONS
    try:
        return tuple(Partition(t.strip().lower()) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"partition must be ev, st or all, got {text!r}") from None


def _lambda(text: str) -> float | None:
    if text == "auto":
        return None
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"lambda must be 'auto' or a number, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("lambda must be >= 0")
    return v


def _seasons(text: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in text.split(",") if s.strip())


def _add_input(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", nargs="+", required=True, metavar="PATH", help="shift-log CSV file(s)")
    p.add_argument("--seasons", type=_seasons, default=None, metavar="LIST", help="comma-separated seasons to keep")


def _add_model(p: argparse.ArgumentParser, stat_default: str = "all", part_default: str = "all") -> None:
    p.add_argument("--stat", type=_stats, default=_stats(stat_default),
                   help="goals, shots, fenwick, corsi (comma list) or all")
    p.add_argument("--partition", type=_partitions, default=_partitions(part_default), help="ev, st or all")
    p.add_argument("--lambda", dest="lam", type=_lambda, default=None, metavar="{auto,VALUE}",
                   help="ridge parameter; a value is per observation unless --lambda-scale absolute")
    p.add_argument("--lambda-scale", choices=("per_observation", "absolute"), default="per_observation")
    p.add_argument("--seed", type=int, default=0, help="seed for the trace-estimation probes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ridge-apm", description="Ridge-regression adjusted plus-minus for hockey.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the models and write coefficient files and the rating table")
    _add_input(p)
    _add_model(p)
    p.add_argument("--out", default="apm_out", help="output directory")
    p.add_argument("--roster", default=None, help="optional player_id,pos,team CSV")

    p = sub.add_parser("report", help="print a leaderboard from a rating table")
    p.add_argument("--ratings", required=True, help="ratings.csv written by 'fit' (or its directory)")
    p.add_argument("--sort", default="G_off", metavar="KEY", help="rating column to sort by, e.g. G_off, G_def_EV_60")
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--position", choices=("F", "D", "all"), default="all")
    p.add_argument("--centered", action="store_true", help="subtract ice-time-weighted positional means")
    p.add_argument("--out", default=None, help="also write the table as CSV here")

    p = sub.add_parser("trace", help="coefficient paths over the lambda grid")
    _add_input(p)
    _add_model(p, "goals", "st")
    p.add_argument("--component", choices=[k.value for k in ColumnKind if k.value.startswith("SKATER")],
                   default=None, help="column kind to trace (default: offense of the partition)")
    p.add_argument("--players", type=_seasons, default=(), metavar="LIST", help="comma-separated player ids")
    p.add_argument("--top", type=int, default=25, help="size of the most-affected sets")
    p.add_argument("--out", default="trace.csv")

    p = sub.add_parser("correlate", help="year-to-year consistency of per-season fits")
    _add_input(p)
    _add_model(p, "all", "ev")
    p.add_argument("--min-toi-ev", type=float, default=500.0)
    p.add_argument("--min-toi-st", type=float, default=150.0)
    p.add_argument("--out", default="correlations.csv")

    p = sub.add_parser("simulate", help="write a synthetic league (shifts.csv, truth.json, roster.csv)")
    for f in dataclasses.fields(SimConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "zone_probs":
            p.add_argument(flag, type=lambda s: tuple(float(x) for x in s.split(",")), default=f.default,
                           help="probabilities of OFF_HOME,DEF_HOME,NEU,NONE")
        else:
            p.add_argument(flag, type=type(f.default), default=f.default)
    p.add_argument("--out", default="sim_out")

    p = sub.add_parser("summarize", help="shift-length and ice-time summary")
    _add_input(p)
    p.add_argument("--bin-width", type=float, default=5.0)
    p.add_argument("--out", default=None, help="write the shift-length histogram CSV here")
    return parser


def _cmd_fit(args) -> int:
    config = RunConfig(tuple(args.input), args.out, args.seasons, args.stat, args.partition, args.lam,
                       args.lambda_scale, args.seed, args.roster)
    result = run_fit(config)
    for (stat, part), m in sorted(result.models.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)):
        print(f"{stat.value:8s} {part.value}  lambda/N={m.lambda_report.chosen_per_observation:.4g} "
              f"({m.lambda_report.policy})  df={m.fit.effective_df:.1f}  N={m.fit.n_obs}")
    print(f"wrote {len(result.files)} files to {args.out}")
    return EXIT_OK


def _cmd_report(args) -> int:
    path = Path(args.ratings)
    if path.is_dir():
        path = path / "ratings.csv"
    with open(path, encoding="utf-8", newline="") as fh:
        ratings = read_ratings_csv(fh)
    ratings = centered(ratings, args.centered)
    rows = leaderboard(ratings, args.sort, args.top, None if args.position == "all" else args.position)
    sys.stdout.write(format_table(rows))
    if args.out and rows:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            writer.writeheader()
            writer.writerows({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()} for r in rows)
    return EXIT_OK


_DEFAULT_TRACE_KIND = {Partition.EV: ColumnKind.SKATER_OFF, Partition.ST: ColumnKind.SKATER_PP_OFF}


def _cmd_trace(args) -> int:
    if len(args.stat) != 1 or len(args.partition) != 1:
        raise ValueError("trace needs exactly one --stat and one --partition")
    stat, part = args.stat[0], args.partition[0]
    ev, st = partition(load_records(args.input, args.seasons))
    try:
        problem = build_problem(ev if part is Partition.EV else st, stat, part)
        selection = SelectionConfig(seed=args.seed)
        if args.lam is None:
            chosen = select_lambda(problem, selection).chosen
        else:
            chosen = args.lam * problem.n_obs if args.lambda_scale == "per_observation" else args.lam
        kind = ColumnKind(args.component) if args.component else _DEFAULT_TRACE_KIND[part]
        report = trace_curve_report(problem, lambda_grid(problem, selection), args.players, chosen, kind, args.top)
    except (KeyError, ValueError, np.linalg.LinAlgError) as exc:
        raise FitError(stat, part, exc) from exc
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        report.write_csv(fh)
    print(f"lambda/N={chosen / problem.n_obs:.4g}; {len(report.most_positive)} rose, "
          f"{len(report.most_negative)} fell; wrote {args.out}")
    return EXIT_OK


def _cmd_correlate(args) -> int:
    records = load_records(args.input, args.seasons)
    rows = consistency_study(records, args.stat, args.partition, args.min_toi_ev, args.min_toi_st, args.lam,
                             args.lambda_scale, SelectionConfig(seed=args.seed))
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        write_consistency_csv(rows, fh)
    for row in rows:
        print(f"{row.stat.value:8s} {row.partition.value} {row.component.value:14s} {row.model:5s} "
              f"pooled r={row.result.pooled:.3f} (n={row.result.pooled_n})")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    config = SimConfig(**{f.name: getattr(args, f.name) for f in dataclasses.fields(SimConfig)})
    result = simulate(config)
    paths = write_simulation(result, args.out)
    print(f"{len(result.records)} shifts; wrote {', '.join(str(p) for p in paths.values())}")
    return EXIT_OK


def _cmd_summarize(args) -> int:
    s = summarize_shifts(load_records(args.input, args.seasons), args.bin_width)
    for part in ("EV", "ST"):
        print(f"{part}: {s.shift_count[part]} shifts, mean length {s.mean_duration[part]:.2f} s")
    print(f"ST - EV mean length: {s.mean_duration['ST'] - s.mean_duration['EV']:.2f} s")
    skaters = len(set(s.ice_time) - s.goalies)
    print(f"{skaters} skaters, {len(s.goalies)} goalies")
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["bin_lo", "bin_hi", "ev_shifts", "st_shifts", "ev_goal_shifts", "st_goal_shifts"])
            e = s.bin_edges
            for i in range(len(e) - 1):
                writer.writerow([repr(float(e[i])), repr(float(e[i + 1])), int(s.histogram["EV"][i]),
                                 int(s.histogram["ST"][i]), int(s.goal_histogram["EV"][i]),
                                 int(s.goal_histogram["ST"][i])])
    return EXIT_OK


_COMMANDS = {"fit": _cmd_fit, "report": _cmd_report, "trace": _cmd_trace, "correlate": _cmd_correlate,
             "simulate": _cmd_simulate, "summarize": _cmd_summarize}


def _category(exc: BaseException) -> tuple[str, int]:
    cause = exc.cause if isinstance(exc, FitError) else exc
    if isinstance(cause, (ShiftLogError, OSError)):
        return "input error", EXIT_INPUT
    if isinstance(cause, np.linalg.LinAlgError):
        return "numerical error", EXIT_NUMERIC
    if isinstance(cause, (ValueError, KeyError)):
        return "configuration error", EXIT_CONFIG
    return "error", EXIT_OTHER


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else (logging.INFO if args.verbose == 1 else logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return _COMMANDS[args.command](args)
    except Exception as exc:  # categorized for the exit code
        label, code = _category(exc)
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"ridge-apm: {label}: {msg}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
