"""Player ratings from fitted coefficients.

Per 60 minutes, every player gets an offense, defense and total value for
each statistic (G, S, F, C) and strength (EV, PP, SH): 36 numbers. Per
season, strengths are converted with ice time and summed into "all
situations", giving 48 numbers. Shot-based values are rescaled into
expected goals with league shooting percentages.

Defense values are negated coefficients, so a positive defensive rating
means events prevented and total = offense + defense.

Values are rounded to a multiple of 2**-32 before any sums are taken, so
the sums are exact in floating point.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

from .design import ColumnKind, Partition
from .shiftlog import ShiftRecord, Stat, Strength
from .solver import RidgeFit

STATS = (Stat.GOALS, Stat.SHOTS, Stat.FENWICK, Stat.CORSI)
STRENGTHS = ("EV", "PP", "SH")
SIDES = ("off", "def")

_QUANTUM = 2.0 ** 32


def snap(x: float) -> float:
    """Round to the nearest multiple of 2**-32 (sums of such values are exact below 2**20)."""
    if not math.isfinite(x):
        return x
    return round(x * _QUANTUM) / _QUANTUM


# (strength, side) -> (column kind, sign, strength whose shooting percentage applies)
# PP defense is played against a shorthanded attack and SH defense against a power play.
_COMPONENTS = {
    ("EV", "off"): (ColumnKind.SKATER_OFF, 1.0, "EV"),
    ("EV", "def"): (ColumnKind.SKATER_DEF, -1.0, "EV"),
    ("PP", "off"): (ColumnKind.SKATER_PP_OFF, 1.0, "PP"),
    ("PP", "def"): (ColumnKind.SKATER_PP_DEF, -1.0, "SH"),
    ("SH", "off"): (ColumnKind.SKATER_SH_OFF, 1.0, "SH"),
    ("SH", "def"): (ColumnKind.SKATER_SH_DEF, -1.0, "PP"),
}


def per60_key(stat: Stat, strength: str, side: str | None = None) -> str:
    t = stat.letter
    return f"{t}_{side}_{strength}_60" if side else f"{t}_{strength}_60"


def season_key(stat: Stat, strength: str | None = None, side: str | None = None) -> str:
    parts = [stat.letter] + ([side] if side else []) + ([strength] if strength else [])
    return "_".join(parts)


PER60_KEYS = tuple(per60_key(t, s, side) for t in STATS for s in STRENGTHS for side in SIDES + (None,))
SEASON_KEYS = tuple(
    [season_key(t, None, side) for t in STATS for side in SIDES + (None,)]
    + [season_key(t, s, side) for t in STATS for s in STRENGTHS for side in SIDES + (None,)]
)


class ShootingPercentageError(ValueError):
    pass


@dataclass(frozen=True)
class ShootingPercentages:
    """League goals per shot / Fenwick event / Corsi event by strength of the shooting team."""

    goals_per_shot: dict[str, float]
    goals_per_fenwick: dict[str, float]
    goals_per_corsi: dict[str, float]

    def factor(self, stat: Stat, strength: str) -> float:
        if stat is Stat.GOALS:
            return 1.0
        table = {Stat.SHOTS: self.goals_per_shot, Stat.FENWICK: self.goals_per_fenwick,
                 Stat.CORSI: self.goals_per_corsi}[stat]
        return table[strength]

    def to_dict(self) -> dict:
        return {"goals_per_shot": self.goals_per_shot, "goals_per_fenwick": self.goals_per_fenwick,
                "goals_per_corsi": self.goals_per_corsi}


def compute_shooting_percentages(records: Iterable[ShiftRecord]) -> ShootingPercentages:
    """Pooled league ratios, split by the shooting team's strength."""
    totals = {s: np.zeros(4, dtype=np.int64) for s in STRENGTHS}
    for r in records:
        if r.strength is Strength.EV:
            home, away = "EV", "EV"
        elif r.strength is Strength.PP_HOME:
            home, away = "PP", "SH"
        else:
            home, away = "SH", "PP"
        for side, ev in ((home, r.events_home), (away, r.events_away)):
            totals[side] += (ev.goals, ev.shots_on_goal, ev.missed_shots, ev.blocked_shots)
    gps, gpf, gpc = {}, {}, {}
    for s, (g, sog, miss, block) in totals.items():
        denoms = (sog, sog + miss, sog + miss + block)
        if min(denoms) == 0:
            raise ShootingPercentageError(f"no shots recorded at strength {s}; cannot form shooting percentages")
        gps[s], gpf[s], gpc[s] = (float(g) / d for d in denoms)
    return ShootingPercentages(gps, gpf, gpc)


def rescale_to_expected_goals(rate_per60: float, stat: Stat, strength: str, pct: ShootingPercentages) -> float:
    """Events/60 to expected goals/60; goals pass through unchanged."""
    return rate_per60 * pct.factor(stat, strength)


def per_season(rate_per60: float, toi_minutes: float, seasons: int = 1) -> float:
    return rate_per60 * toi_minutes / 60.0 / seasons


@dataclass(frozen=True)
class PlayerTime:
    """Minutes by strength (EV, PP = own team advantaged, SH) and seasons with any ice time."""

    minutes: dict[str, float]
    seasons: tuple[str, ...]


def ice_time(records: Iterable[ShiftRecord]) -> dict[str, PlayerTime]:
    """Skater minutes by strength over the given (already filtered) records."""
    secs: dict[str, dict[str, float]] = defaultdict(lambda: dict.fromkeys(STRENGTHS, 0.0))
    seasons: dict[str, set[str]] = defaultdict(set)
    for r in records:
        if r.strength is Strength.EV:
            home, away = "EV", "EV"
        elif r.strength is Strength.PP_HOME:
            home, away = "PP", "SH"
        else:
            home, away = "SH", "PP"
        for players, s in ((r.home_skaters, home), (r.away_skaters, away)):
            for p in players:
                secs[p][s] += r.duration_s
                seasons[p].add(r.season)
    return {p: PlayerTime({s: v / 60.0 for s, v in secs[p].items()}, tuple(sorted(seasons[p])))
            for p in sorted(secs)}


@dataclass(frozen=True)
class PlayerRating:
    player_id: str
    position: str
    team: str
    seasons: tuple[str, ...]
    toi_minutes: dict[str, float]
    per60: dict[str, float]
    per60_err: dict[str, float]
    per_season: dict[str, float]
    per_season_err: dict[str, float]
    degenerate: frozenset[str] = field(default_factory=frozenset)

    def value(self, key: str) -> float:
        if key in self.per_season:
            return self.per_season[key]
        if key in self.per60:
            return self.per60[key]
        if key.endswith("_err") and key[:-4] in self.per60_err:
            return self.per60_err[key[:-4]]
        raise KeyError(key)


def _coef_lookup(fit: RidgeFit) -> dict[tuple[ColumnKind, str], int]:
    return {(e.kind, e.player_id): i for i, e in enumerate(fit.catalog) if e.player_id is not None}


def _combine_err(*errs: float) -> float:
    return math.sqrt(sum(e * e for e in errs))


def _aggregate(per60_raw: Mapping[tuple[Stat, str, str], tuple[float, float]], time: PlayerTime
               ) -> tuple[dict, dict, dict, dict]:
    """Table-1 closure from snapped per-60 components ``(stat, strength, side) -> (value, err)``."""
    n_seasons = max(len(time.seasons), 1)
    per60, per60_err, season, season_err = {}, {}, {}, {}
    for t in STATS:
        all_sides = {side: 0.0 for side in SIDES}
        all_err = {side: 0.0 for side in SIDES}
        for s in STRENGTHS:
            toi = time.minutes.get(s, 0.0)
            vals = {}
            for side in SIDES:
                v, e = per60_raw[(t, s, side)]
                per60[per60_key(t, s, side)] = v
                per60_err[per60_key(t, s, side)] = e
                sv = snap(per_season(v, toi, n_seasons))
                se = per_season(e, toi, n_seasons) if toi > 0 else 0.0
                season[season_key(t, s, side)] = sv
                season_err[season_key(t, s, side)] = se
                vals[side] = (v, e, sv, se)
                all_sides[side] += sv
                all_err[side] += se * se
            per60[per60_key(t, s)] = vals["off"][0] + vals["def"][0]
            per60_err[per60_key(t, s)] = _combine_err(vals["off"][1], vals["def"][1])
            season[season_key(t, s)] = vals["off"][2] + vals["def"][2]
            season_err[season_key(t, s)] = _combine_err(vals["off"][3], vals["def"][3])
        for side in SIDES:
            season[season_key(t, None, side)] = all_sides[side]
            season_err[season_key(t, None, side)] = math.sqrt(all_err[side])
        season[season_key(t)] = all_sides["off"] + all_sides["def"]
        season_err[season_key(t)] = math.sqrt(all_err["off"] + all_err["def"])
    return per60, per60_err, season, season_err


def build_rating_table(fits: Mapping[tuple[Stat, Partition], RidgeFit], toi: Mapping[str, PlayerTime],
                       pct: ShootingPercentages, roster: Mapping[str, tuple[str, str]] | None = None
                       ) -> list[PlayerRating]:
    """One rating per skater appearing in any fit, sorted by player id.

    ``roster`` maps player id to ``(position, team)``; players missing from
    it get empty strings. A component whose column is absent or degenerate
    is reported as 0 with infinite error and listed in ``degenerate``.
    """
    missing = [(t.value, p.value) for t in STATS for p in Partition if (t, p) not in fits]
    if missing:
        raise ValueError(f"rating table needs all 8 fits; missing {missing}")
    roster = roster or {}
    lookups = {key: _coef_lookup(fit) for key, fit in fits.items()}
    players = sorted({pid for fit in fits.values() for pid in fit.catalog.skaters})
    out = []
    for pid in players:
        if pid not in toi:
            raise KeyError(f"player {pid!r} appears in a fit but has no ice time")
        time = toi[pid]
        raw = {}
        degenerate = set()
        for t in STATS:
            for (s, side), (kind, sign, pct_strength) in _COMPONENTS.items():
                part = Partition.EV if s == "EV" else Partition.ST
                fit = fits[(t, part)]
                i = lookups[(t, part)].get((kind, pid))
                if i is None or not fit.active[i]:
                    degenerate.add(per60_key(t, s, side))
                    raw[(t, s, side)] = (0.0, math.inf)
                    continue
                f = pct.factor(t, pct_strength)
                raw[(t, s, side)] = (snap(sign * f * float(fit.coefficients[i])), f * float(fit.std_errors[i]))
        per60, per60_err, season, season_err = _aggregate(raw, time)
        pos, team = roster.get(pid, ("", ""))
        out.append(PlayerRating(pid, pos, team, time.seasons, dict(time.minutes), per60, per60_err,
                                season, season_err, frozenset(degenerate)))
    return out


class ViewMode(str, Enum):
    RAW = "RAW"
    POSITION_CENTERED = "POSITION_CENTERED"


def positional_view(ratings: Sequence[PlayerRating], mode: ViewMode = ViewMode.RAW) -> list[PlayerRating]:
    """Optionally subtract each position's ice-time-weighted mean from every per-60 component.

    Per-season values and totals are rebuilt from the centered components.
    """
    if mode is ViewMode.RAW:
        return list(ratings)
    means: dict[tuple[str, Stat, str, str], float] = {}
    by_pos: dict[str, list[PlayerRating]] = defaultdict(list)
    for r in ratings:
        by_pos[r.position].append(r)
    for pos, group in by_pos.items():
        for t in STATS:
            for s in STRENGTHS:
                w = np.array([r.toi_minutes.get(s, 0.0) for r in group])
                for side in SIDES:
                    v = np.array([r.per60[per60_key(t, s, side)] for r in group])
                    means[(pos, t, s, side)] = float(np.dot(w, v) / w.sum()) if w.sum() > 0 else 0.0
    out = []
    for r in ratings:
        raw = {(t, s, side): (snap(r.per60[per60_key(t, s, side)] - means[(r.position, t, s, side)]),
                              r.per60_err[per60_key(t, s, side)])
               for t in STATS for s in STRENGTHS for side in SIDES}
        per60, per60_err, season, season_err = _aggregate(raw, PlayerTime(r.toi_minutes, r.seasons))
        out.append(replace(r, per60=per60, per60_err=per60_err, per_season=season, per_season_err=season_err))
    return out


def rating_columns() -> list[str]:
    cols = ["player_id", "pos", "team"] + list(SEASON_KEYS)
    for k in PER60_KEYS:
        cols += [k, f"{k}_err"]
    return cols + ["toi_EV", "toi_PP", "toi_SH", "seasons", "degenerate"]


def write_ratings_csv(ratings: Iterable[PlayerRating], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(rating_columns())
    for r in ratings:
        row = [r.player_id, r.position, r.team]
        row += [repr(float(r.per_season[k])) for k in SEASON_KEYS]
        for k in PER60_KEYS:
            row += [repr(float(r.per60[k])), repr(float(r.per60_err[k]))]
        row += [repr(float(r.toi_minutes.get(s, 0.0))) for s in STRENGTHS]
        row += [";".join(r.seasons), ";".join(sorted(r.degenerate))]
        writer.writerow(row)


def _json_number(x: float):
    x = float(x)
    return x if math.isfinite(x) else str(x)


def ratings_to_json(ratings: Iterable[PlayerRating]) -> str:
    rows = []
    for r in ratings:
        rows.append({
            "player_id": r.player_id,
            "position": r.position,
            "team": r.team,
            "seasons": list(r.seasons),
            "toi_minutes": {k: float(v) for k, v in r.toi_minutes.items()},
            "per60": {k: _json_number(r.per60[k]) for k in PER60_KEYS},
            "per60_err": {k: _json_number(r.per60_err[k]) for k in PER60_KEYS},
            "per_season": {k: _json_number(r.per_season[k]) for k in SEASON_KEYS},
            "per_season_err": {k: _json_number(r.per_season_err[k]) for k in SEASON_KEYS},
            "degenerate": sorted(r.degenerate),
        })
    return json.dumps(rows, indent=1, sort_keys=True) + "\n"


def read_ratings_csv(stream: TextIO) -> list[PlayerRating]:
    out = []
    for row in csv.DictReader(stream):
        per60 = {k: float(row[k]) for k in PER60_KEYS}
        err = {k: float(row[f"{k}_err"]) for k in PER60_KEYS}
        season = {k: float(row[k]) for k in SEASON_KEYS}
        toi = {s: float(row[f"toi_{s}"]) for s in STRENGTHS}
        seasons = tuple(x for x in row["seasons"].split(";") if x)
        degenerate = frozenset(x for x in row["degenerate"].split(";") if x)
        out.append(PlayerRating(row["player_id"], row["pos"], row["team"], seasons, toi, per60, err,
                                season, {}, degenerate))
    return out


def read_roster(stream: TextIO) -> dict[str, tuple[str, str]]:
    """``player_id,pos,team`` CSV to ``{player_id: (pos, team)}``."""
    reader = csv.DictReader(stream)
    need = {"player_id", "pos", "team"}
    if reader.fieldnames is None or not need <= set(reader.fieldnames):
        raise ValueError(f"roster needs columns {sorted(need)}")
    return {row["player_id"]: (row["pos"], row["team"]) for row in reader}
