"""Run orchestration and report tables.

``run_fit`` fits every requested (statistic, partition) model and writes
one set of files per model plus the combined rating table. The other
functions turn fits or ratings into leaderboards, coefficient paths and
year-to-year consistency numbers. Everything written is a pure function of
the inputs and the seed.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

from .design import ColumnKind, DesignProblem, Partition, assemble, build_catalog, standardize
from .lambda_select import LambdaReport, SelectionConfig, select_lambda
from .rating import (
    PER60_KEYS,
    SEASON_KEYS,
    PlayerRating,
    ViewMode,
    build_rating_table,
    compute_shooting_percentages,
    ice_time,
    positional_view,
    ratings_to_json,
    read_roster,
    write_ratings_csv,
)
from .shiftlog import ShiftRecord, Stat, partition, read_shift_logs, to_observations
from .solver import RidgeFit, solve_min_norm_ols, solve_ridge

log = logging.getLogger(__name__)

ALL_STATS = (Stat.GOALS, Stat.SHOTS, Stat.FENWICK, Stat.CORSI)
ALL_PARTITIONS = (Partition.EV, Partition.ST)


class FitError(RuntimeError):
    """A module error raised while fitting one (statistic, partition) model."""

    def __init__(self, stat: Stat, part: Partition, cause: Exception):
        self.stat, self.partition, self.cause = stat, part, cause
        super().__init__(f"[{stat.value}/{part.value}] {type(cause).__name__}: {cause}")


@dataclass(frozen=True)
class RunConfig:
    inputs: tuple[str, ...]
    out_dir: str = "apm_out"
    seasons: tuple[str, ...] | None = None
    stats: tuple[Stat, ...] = ALL_STATS
    partitions: tuple[Partition, ...] = ALL_PARTITIONS
    # None means AUTO; a number is used for every model
    fixed_lambda: float | None = None
    # "per_observation": lambda / N, the scale of the selection grid; "absolute": as solved
    lambda_scale: str = "per_observation"
    seed: int = 0
    roster: str | None = None
    min_toi_ev: float = 500.0
    min_toi_st: float = 150.0
    selection: SelectionConfig = field(default_factory=SelectionConfig)

    def __post_init__(self):
        if not self.inputs:
            raise ValueError("at least one input file is required")
        if not self.stats:
            raise ValueError("at least one statistic is required")
        if not self.partitions:
            raise ValueError("at least one partition is required")
        if self.lambda_scale not in ("per_observation", "absolute"):
            raise ValueError(f"unknown lambda scale {self.lambda_scale!r}")
        if self.fixed_lambda is not None and not (self.fixed_lambda >= 0 and math.isfinite(self.fixed_lambda)):
            raise ValueError("a fixed lambda must be finite and >= 0")


@dataclass
class ModelResult:
    stat: Stat
    partition: Partition
    problem: DesignProblem
    fit: RidgeFit
    lambda_report: LambdaReport


@dataclass
class RunResult:
    models: dict[tuple[Stat, Partition], ModelResult]
    ratings: list[PlayerRating] | None
    files: list[Path]


def load_records(paths: Iterable[str], seasons: Sequence[str] | None = None) -> list[ShiftRecord]:
    records = read_shift_logs(paths)
    if seasons:
        keep = set(seasons)
        records = [r for r in records if r.season in keep]
        if not records:
            raise ValueError(f"no shifts in seasons {sorted(keep)}")
    return records


def build_problem(records: Sequence[ShiftRecord], stat: Stat, part: Partition) -> DesignProblem:
    """Standardized problem for one model from already partitioned records."""
    obs = to_observations(records, stat)
    return standardize(assemble(obs, build_catalog(obs, stat, part)))


def fit_model(problem: DesignProblem, fixed_lambda: float | None = None, lambda_scale: str = "per_observation",
              selection: SelectionConfig | None = None) -> tuple[RidgeFit, LambdaReport]:
    selection = selection or SelectionConfig()
    if fixed_lambda is None:
        report = select_lambda(problem, selection)
    else:
        lam = fixed_lambda * problem.n_obs if lambda_scale == "per_observation" else fixed_lambda
        report = LambdaReport.fixed(lam, problem.n_obs, selection.seed)
    return solve_ridge(problem, report.chosen), report


def _num(x: float) -> str:
    return repr(float(x))


def write_fit_csv(fit: RidgeFit, stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["column_index", "kind", "player_id", "coefficient_per60", "std_error"])
    for i, e in enumerate(fit.catalog):
        writer.writerow([i, e.kind.value, e.player_id or "", _num(fit.coefficients[i]), _num(fit.std_errors[i])])


def fit_diagnostics(fit: RidgeFit, report: LambdaReport) -> dict:
    return {
        "lambda": fit.lam,
        "lambda_per_observation": fit.lam / fit.n_obs,
        "lambda_policy": report.policy,
        "effective_df": fit.effective_df,
        "weighted_mse": fit.weighted_mse,
        "sigma2_hat": fit.sigma2_hat,
        "n_obs": fit.n_obs,
        "n_columns": len(fit.catalog),
        "n_degenerate": int((~fit.active).sum()),
    }


def write_grid_csv(report: LambdaReport, stream: TextIO, catalog=None) -> None:
    """One row per grid point; with a catalog, per-column coefficient snapshots follow."""
    writer = csv.writer(stream, lineterminator="\n")
    labels = [f"coef_{catalog.label(i)}" for i in range(len(catalog))] if catalog is not None else []
    writer.writerow(["lambda", "lambda_per_observation", "gcv", "trace_estimate", "max_vif", "coef_norm",
                     "refined"] + labels)
    for g in report.grid:
        coefs = [_num(c) for c in g.coefficients] if labels else []
        writer.writerow([_num(g.lam), _num(g.lam / report.n_obs), _num(g.gcv), _num(g.trace_estimate),
                         _num(g.max_vif), _num(g.coef_norm), int(g.refined)] + coefs)


def _write_text(path: Path, text: str, files: list[Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    files.append(path)


def run_fit(config: RunConfig) -> RunResult:
    """Fit the requested models and write their artifacts to ``config.out_dir``.

    Per model ``<stat>_<partition>``: ``fit_*.csv`` (coefficients and SEs),
    ``fit_*.json`` (diagnostics), ``lambda_*.json`` (selection report) and
    ``grid_*.csv`` (the selection grid). With all eight models present the
    combined ``ratings.csv`` / ``ratings.json`` and ``shooting_pct.json``
    follow.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = load_records(config.inputs, config.seasons)
    ev, st = partition(records)
    by_part = {Partition.EV: ev, Partition.ST: st}
    selection = replace(config.selection, seed=config.seed)
    models: dict[tuple[Stat, Partition], ModelResult] = {}
    files: list[Path] = []
    for stat in config.stats:
        for part in config.partitions:
            try:
                if not by_part[part]:
                    raise ValueError(f"no {part.value} shifts with both goalies in net")
                problem = build_problem(by_part[part], stat, part)
                fit, report = fit_model(problem, config.fixed_lambda, config.lambda_scale, selection)
            except Exception as exc:
                raise FitError(stat, part, exc) from exc
            models[(stat, part)] = ModelResult(stat, part, problem, fit, report)
            tag = f"{stat.value}_{part.value}"
            path = out / f"fit_{tag}.csv"
            with open(path, "w", encoding="utf-8", newline="") as fh:
                write_fit_csv(fit, fh)
            files.append(path)
            _write_text(out / f"fit_{tag}.json",
                        json.dumps(fit_diagnostics(fit, report), indent=2, sort_keys=True) + "\n", files)
            _write_text(out / f"lambda_{tag}.json", report.to_json() + "\n", files)
            path = out / f"grid_{tag}.csv"
            with open(path, "w", encoding="utf-8", newline="") as fh:
                write_grid_csv(report, fh, fit.catalog)
            files.append(path)
            log.info("%s: lambda/N=%.4g (%s), effective df %.1f", tag, report.chosen_per_observation,
                     report.policy, fit.effective_df)

    ratings = None
    if len(models) == len(ALL_STATS) * len(ALL_PARTITIONS):
        pct = compute_shooting_percentages(ev + st)
        roster = None
        if config.roster:
            with open(config.roster, encoding="utf-8", newline="") as fh:
                roster = read_roster(fh)
        ratings = build_rating_table({k: m.fit for k, m in models.items()}, ice_time(ev + st), pct, roster)
        path = out / "ratings.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            write_ratings_csv(ratings, fh)
        files.append(path)
        _write_text(out / "ratings.json", ratings_to_json(ratings), files)
        _write_text(out / "shooting_pct.json", json.dumps(pct.to_dict(), indent=2, sort_keys=True) + "\n", files)
    else:
        log.info("rating table skipped: it needs all four statistics in both partitions")
    return RunResult(models, ratings, files)


# --- leaderboards ---------------------------------------------------------

_LAYOUTS = {
    # per-season offense: the four statistics plus EV per-60 goals and shots with errors
    "off": ["G_off", "S_off", "F_off", "C_off", "G_off_EV_60", "G_off_EV_60_err", "S_off_EV_60", "S_off_EV_60_err"],
    "def": ["G_def", "S_def", "F_def", "C_def", "G_def_EV_60", "G_def_EV_60_err", "S_def_EV_60", "S_def_EV_60_err"],
    "total": ["G", "S", "F", "C", "G_off_EV_60", "S_off_EV_60", "G_off_PP_60", "G_off_PP_60_err",
              "S_off_PP_60", "S_off_PP_60_err"],
}


def valid_sort_keys() -> list[str]:
    return list(SEASON_KEYS) + list(PER60_KEYS)


def leaderboard_columns(sort_key: str) -> list[str]:
    if sort_key in SEASON_KEYS and "_" not in sort_key:
        cols = _LAYOUTS["total"]
    elif sort_key.endswith("_def") or "_def_" in sort_key:
        cols = _LAYOUTS["def"]
    elif sort_key.endswith("_off") or "_off_" in sort_key:
        cols = _LAYOUTS["off"]
    else:
        cols = _LAYOUTS["total"]
    return ([sort_key] if sort_key not in cols else []) + cols


def leaderboard(ratings: Sequence[PlayerRating], sort_key: str, top_n: int = 10,
                position: str | None = None) -> list[dict]:
    """Top players by ``sort_key`` (descending, ties by player id)."""
    if sort_key not in SEASON_KEYS and sort_key not in PER60_KEYS:
        raise KeyError(f"unknown sort key {sort_key!r}; valid keys: {', '.join(valid_sort_keys())}")
    pool = [r for r in ratings if position in (None, "all") or r.position == position]

    def order(r: PlayerRating):
        v = r.value(sort_key)
        return (math.isnan(v), -v if not math.isnan(v) else 0.0, r.player_id)

    cols = leaderboard_columns(sort_key)
    rows = []
    for r in sorted(pool, key=order)[:max(top_n, 0)]:
        row = {"player_id": r.player_id, "pos": r.position, "team": r.team}
        row.update({c: r.value(c) for c in cols})
        rows.append(row)
    return rows


def _fmt_cell(col: str, v) -> str:
    if isinstance(v, str):
        return v
    if "_60" in col:
        return f"{v:.2f}"
    return f"{v:.0f}" if math.isfinite(v) else str(v)


def format_table(rows: Sequence[dict]) -> str:
    """Fixed-width text: per-60 values to 2 decimals, per-season values to integers."""
    if not rows:
        return "(no players)\n"
    cols = list(rows[0])
    cells = [[_fmt_cell(c, row[c]) for c in cols] for row in rows]
    widths = [max(len(c), *(len(r[i]) for r in cells)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(x.rjust(w) for x, w in zip(r, widths)) for r in cells]
    return "\n".join(lines) + "\n"


def centered(ratings: Sequence[PlayerRating], on: bool) -> list[PlayerRating]:
    return positional_view(ratings, ViewMode.POSITION_CENTERED if on else ViewMode.RAW)


# --- coefficient paths ----------------------------------------------------

@dataclass
class TraceReport:
    lambdas: np.ndarray
    kind: ColumnKind
    paths: dict[str, np.ndarray]
    most_positive: list[str]
    most_negative: list[str]
    named: list[str]
    n_obs: int

    def write_csv(self, stream: TextIO) -> None:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["group", "player_id", "kind", "lambda", "lambda_per_observation", "coefficient_per60"])
        for group, ids in (("named", self.named), ("most_positive", self.most_positive),
                           ("most_negative", self.most_negative)):
            for pid in ids:
                for lam, c in zip(self.lambdas, self.paths[pid]):
                    writer.writerow([group, pid, self.kind.value, _num(lam), _num(lam / self.n_obs), _num(c)])


def trace_curve_report(problem: DesignProblem, lambdas: Sequence[float], players: Sequence[str],
                       chosen: float, kind: ColumnKind, top: int = 25) -> TraceReport:
    """Coefficient paths of ``kind`` columns over ``lambdas``.

    Besides the named players, reports the ``top`` players whose coefficient
    rose most (and fell most) between the smallest grid lambda and ``chosen``.
    """
    lambdas = np.asarray(sorted(lambdas), dtype=float)
    cols = {e.player_id: i for i, e in enumerate(problem.catalog) if e.kind is kind}
    unknown = [p for p in players if p not in cols]
    if unknown:
        raise KeyError(f"no {kind.value} column for {', '.join(unknown)}")
    idx = np.fromiter(cols.values(), dtype=int, count=len(cols))
    ids = list(cols)
    coef = np.array([solve_ridge(problem, lam).coefficients[idx] for lam in lambdas])
    start = coef[0]
    end = solve_ridge(problem, chosen).coefficients[idx]
    change = end - start
    # round-off is not movement
    tol = 1e-12 * max(float(np.abs(coef).max(initial=0.0)), float(np.abs(end).max(initial=0.0)), 1.0)
    pos = [ids[i] for i in sorted(np.flatnonzero(change > tol), key=lambda i: (-change[i], ids[i]))][:top]
    neg = [ids[i] for i in sorted(np.flatnonzero(change < -tol), key=lambda i: (change[i], ids[i]))][:top]
    paths = {pid: coef[:, j] for j, pid in enumerate(ids)}
    return TraceReport(lambdas, kind, paths, pos, neg, list(players), problem.n_obs)


# --- year-to-year consistency ---------------------------------------------

@dataclass(frozen=True)
class PairCorrelation:
    season_a: str
    season_b: str
    n_players: int
    r: float


@dataclass(frozen=True)
class Consistency:
    pairs: tuple[PairCorrelation, ...]
    pooled: float
    pooled_n: int


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    if len(x) < 3 or np.std(x) == 0 or np.std(y) == 0:
        return float("nan")
    return float(np.corrcoef(x, y)[0, 1])


def component_values(fit: RidgeFit, kind: ColumnKind) -> dict[str, float]:
    return {e.player_id: float(fit.coefficients[i]) for i, e in enumerate(fit.catalog)
            if e.kind is kind and fit.active[i]}


def year_to_year_correlation(per_season_fits: Mapping[str, RidgeFit], kind: ColumnKind,
                             toi: Mapping[str, Mapping[str, float]], toi_minimum: float) -> Consistency:
    """Correlation of one component between consecutive seasons.

    ``toi`` maps season to player minutes for the component's strength; a
    player counts in a pair only with at least ``toi_minimum`` in both
    seasons. Pairs with fewer than three players are undefined (NaN) and
    left out of the pooled value.
    """
    seasons = sorted(per_season_fits)
    if len(seasons) < 2:
        raise ValueError("need at least two seasons")
    pairs, xs, ys = [], [], []
    for a, b in zip(seasons[:-1], seasons[1:]):
        va, vb = component_values(per_season_fits[a], kind), component_values(per_season_fits[b], kind)
        ids = sorted(p for p in va.keys() & vb.keys()
                     if toi[a].get(p, 0.0) >= toi_minimum and toi[b].get(p, 0.0) >= toi_minimum)
        x = np.array([va[p] for p in ids])
        y = np.array([vb[p] for p in ids])
        r = _pearson(x, y)
        pairs.append(PairCorrelation(a, b, len(ids), r))
        if not math.isnan(r):
            xs.append(x)
            ys.append(y)
    if xs:
        x, y = np.concatenate(xs), np.concatenate(ys)
        pooled, n = _pearson(x, y), len(x)
    else:
        pooled, n = float("nan"), 0
    return Consistency(tuple(pairs), pooled, n)


# components compared year to year, with the strength whose minutes set the floor
_CORRELATE_COMPONENTS = {
    Partition.EV: ((ColumnKind.SKATER_OFF, "EV"),),
    Partition.ST: ((ColumnKind.SKATER_PP_OFF, "PP"), (ColumnKind.SKATER_SH_DEF, "SH")),
}


@dataclass(frozen=True)
class ConsistencyRow:
    stat: Stat
    partition: Partition
    model: str
    result: Consistency
    component: ColumnKind = ColumnKind.SKATER_OFF


def consistency_study(records: Sequence[ShiftRecord], stats: Sequence[Stat], partitions: Sequence[Partition],
                      min_toi_ev: float = 500.0, min_toi_st: float = 150.0, fixed_lambda: float | None = None,
                      lambda_scale: str = "per_observation", selection: SelectionConfig | None = None
                      ) -> list[ConsistencyRow]:
    """Per-season ridge and OLS fits, then year-to-year correlations.

    EV compares the offense component; ST compares power-play offense and
    shorthanded defense. The OLS baseline is the minimum-norm least-squares
    solution, since even strength designs are rank deficient.
    """
    seasons = sorted({r.season for r in records})
    if len(seasons) < 2:
        raise ValueError("need at least two seasons")
    split = {s: partition([r for r in records if r.season == s]) for s in seasons}
    toi = {s: ice_time(ev + st) for s, (ev, st) in split.items()}
    rows = []
    for part in partitions:
        minimum = min_toi_ev if part is Partition.EV else min_toi_st
        for stat in stats:
            ridge, ols = {}, {}
            for s in seasons:
                recs = split[s][0] if part is Partition.EV else split[s][1]
                try:
                    problem = build_problem(recs, stat, part)
                    ridge[s] = fit_model(problem, fixed_lambda, lambda_scale, selection)[0]
                    ols[s] = solve_min_norm_ols(problem)
                except Exception as exc:
                    raise FitError(stat, part, exc) from exc
            for kind, strength in _CORRELATE_COMPONENTS[part]:
                minutes = {s: {p: t.minutes[strength] for p, t in toi[s].items()} for s in seasons}
                for model, fits in (("ridge", ridge), ("ols", ols)):
                    rows.append(ConsistencyRow(stat, part, model,
                                               year_to_year_correlation(fits, kind, minutes, minimum), kind))
    return rows


def write_consistency_csv(rows: Iterable[ConsistencyRow], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["stat", "partition", "component", "model", "season_a", "season_b", "n_players", "correlation"])
    for row in rows:
        head = [row.stat.value, row.partition.value, row.component.value, row.model]
        for p in row.result.pairs:
            writer.writerow(head + [p.season_a, p.season_b, p.n_players, _num(p.r)])
        writer.writerow(head + ["pooled", "pooled", row.result.pooled_n, _num(row.result.pooled)])
