"""Shift-log ingestion.

A shift log is a CSV with one row per on-ice interval of fixed personnel.
Rows are parsed into immutable :class:`ShiftRecord` objects, split into
even-strength and special-teams partitions (empty-net play dropped), and
expanded into two regression observations per shift.
"""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

HEADER = (
    "season", "game_id", "duration_s", "strength", "zone_start",
    "home_skaters", "away_skaters", "home_goalie", "away_goalie",
    "h_goals", "h_sog", "h_miss", "h_block",
    "a_goals", "a_sog", "a_miss", "a_block",
)

SECONDS_PER_HOUR = 3600.0


class ShiftLogError(ValueError):
    """Malformed or invalid shift-log row."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class Strength(str, Enum):
    EV = "EV"
    PP_HOME = "PP_HOME"
    PP_AWAY = "PP_AWAY"


class ZoneStart(str, Enum):
    OFF_HOME = "OFF_HOME"
    DEF_HOME = "DEF_HOME"
    NEUTRAL = "NEU"
    NONE = "NONE"


class Stat(str, Enum):
    GOALS = "goals"
    SHOTS = "shots"
    FENWICK = "fenwick"
    CORSI = "corsi"

    @property
    def letter(self) -> str:
        return self.value[0].upper()

    @classmethod
    def parse(cls, text: str) -> "Stat":
        t = text.strip().lower()
        for s in cls:
            if t in (s.value, s.letter.lower()):
                return s
        raise ValueError(f"unknown stat {text!r}")


class Zone(str, Enum):
    """Faceoff zone from the offense team's point of view."""

    OFF = "OFF"
    DEF = "DEF"
    NEUTRAL = "NEUTRAL"


class StrengthRole(str, Enum):
    EV = "EV"
    PP_OFFENSE = "PP_OFFENSE"
    SH_OFFENSE = "SH_OFFENSE"


@dataclass(frozen=True)
class EventCounts:
    goals: int = 0
    shots_on_goal: int = 0
    missed_shots: int = 0
    blocked_shots: int = 0

    def __post_init__(self):
        for name in ("goals", "shots_on_goal", "missed_shots", "blocked_shots"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.goals > self.shots_on_goal:
            raise ValueError("goals cannot exceed shots_on_goal")

    def count(self, stat: Stat) -> int:
        if stat is Stat.GOALS:
            return self.goals
        if stat is Stat.SHOTS:
            return self.shots_on_goal
        if stat is Stat.FENWICK:
            return self.shots_on_goal + self.missed_shots
        return self.shots_on_goal + self.missed_shots + self.blocked_shots


@dataclass(frozen=True)
class ShiftRecord:
    season: str
    game_id: str
    duration_s: float
    strength: Strength
    zone_start: ZoneStart
    home_skaters: tuple[str, ...]
    away_skaters: tuple[str, ...]
    home_goalie: str | None
    away_goalie: str | None
    events_home: EventCounts
    events_away: EventCounts
    line: int | None = field(default=None, compare=False)

    def __post_init__(self):
        if not (math.isfinite(self.duration_s) and self.duration_s > 0):
            raise ValueError("duration_s must be a positive number")
        for side, skaters in (("home_skaters", self.home_skaters), ("away_skaters", self.away_skaters)):
            if not 1 <= len(skaters) <= 6:
                raise ValueError(f"{side} must list 1-6 players, got {len(skaters)}")
            dup = _first_duplicate(skaters)
            if dup is not None:
                raise ValueError(f"duplicate skater {dup!r} in {side}")
        both = set(self.home_skaters) & set(self.away_skaters)
        if both:
            raise ValueError(f"player {sorted(both)[0]!r} appears on both teams")
        goalies = {g for g in (self.home_goalie, self.away_goalie) if g}
        on_ice = set(self.home_skaters) | set(self.away_skaters)
        if goalies & on_ice:
            raise ValueError(f"goalie {sorted(goalies & on_ice)[0]!r} also listed as a skater")
        nh, na = len(self.home_skaters), len(self.away_skaters)
        if self.strength is Strength.EV and nh != na:
            raise ValueError(f"strength EV requires equal skater counts, got {nh}v{na}")
        if self.strength is Strength.PP_HOME and nh <= na:
            raise ValueError(f"strength PP_HOME requires more home skaters, got {nh}v{na}")
        if self.strength is Strength.PP_AWAY and na <= nh:
            raise ValueError(f"strength PP_AWAY requires more away skaters, got {nh}v{na}")

    @property
    def has_both_goalies(self) -> bool:
        return bool(self.home_goalie) and bool(self.away_goalie)


@dataclass(frozen=True)
class Observation:
    """One weighted regression row: one team's scoring rate during a shift."""

    weight: float
    response: float
    offense_players: tuple[str, ...]
    defense_players: tuple[str, ...]
    defending_goalie: str | None
    zone: Zone
    strength_role: StrengthRole
    season: str = ""


def _first_duplicate(items: Sequence[str]) -> str | None:
    seen = set()
    for x in items:
        if x in seen:
            return x
        seen.add(x)
    return None


def _split_players(cell: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in cell.split(";") if p.strip())


def _int_field(row: dict, name: str, line: int) -> int:
    raw = (row.get(name) or "").strip()
    try:
        value = int(raw)
    except ValueError:
        raise ShiftLogError(f"expected an integer count, got {raw!r}", line, name) from None
    if value < 0:
        raise ShiftLogError(f"count must be >= 0, got {value}", line, name)
    return value


def _events(row: dict, prefix: str, line: int) -> EventCounts:
    goals = _int_field(row, f"{prefix}_goals", line)
    sog = _int_field(row, f"{prefix}_sog", line)
    if goals > sog:
        raise ShiftLogError(f"goals ({goals}) exceed shots on goal ({sog})", line, f"{prefix}_goals")
    return EventCounts(goals, sog, _int_field(row, f"{prefix}_miss", line), _int_field(row, f"{prefix}_block", line))


def _parse_row(row: dict, line: int) -> ShiftRecord:
    raw_dur = (row.get("duration_s") or "").strip()
    try:
        duration = float(raw_dur)
    except ValueError:
        raise ShiftLogError(f"expected a number, got {raw_dur!r}", line, "duration_s") from None
    if not (math.isfinite(duration) and duration > 0):
        raise ShiftLogError(f"duration must be positive, got {raw_dur!r}", line, "duration_s")
    try:
        strength = Strength((row.get("strength") or "").strip())
    except ValueError:
        raise ShiftLogError(f"unknown strength {row.get('strength')!r}", line, "strength") from None
    try:
        zone = ZoneStart((row.get("zone_start") or "").strip())
    except ValueError:
        raise ShiftLogError(f"unknown zone_start {row.get('zone_start')!r}", line, "zone_start") from None
    home = _split_players(row.get("home_skaters") or "")
    away = _split_players(row.get("away_skaters") or "")
    for name, skaters in (("home_skaters", home), ("away_skaters", away)):
        dup = _first_duplicate(skaters)
        if dup is not None:
            raise ShiftLogError(f"duplicate skater {dup!r}", line, name)
    both = sorted(set(home) & set(away))
    if both:
        raise ShiftLogError(f"player {both[0]!r} listed on both teams", line, "away_skaters")
    try:
        return ShiftRecord(
            season=(row.get("season") or "").strip(),
            game_id=(row.get("game_id") or "").strip(),
            duration_s=duration,
            strength=strength,
            zone_start=zone,
            home_skaters=home,
            away_skaters=away,
            home_goalie=(row.get("home_goalie") or "").strip() or None,
            away_goalie=(row.get("away_goalie") or "").strip() or None,
            events_home=_events(row, "h", line),
            events_away=_events(row, "a", line),
            line=line,
        )
    except ShiftLogError:
        raise
    except ValueError as exc:
        raise ShiftLogError(str(exc), line) from None


def parse_shift_log(stream: TextIO) -> list[ShiftRecord]:
    """Parse a shift-log CSV stream; line numbers count the header as line 1."""
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise ShiftLogError("empty file: header row required", 1) from None
    header = [h.strip() for h in header]
    if tuple(header) != HEADER:
        missing = [h for h in HEADER if h not in header]
        detail = f"missing columns {missing}" if missing else "columns out of order or unexpected"
        raise ShiftLogError(f"bad header ({detail})", 1)
    records = []
    for line, values in enumerate(reader, start=2):
        if not values or all(not v.strip() for v in values):
            continue
        if len(values) != len(HEADER):
            raise ShiftLogError(f"expected {len(HEADER)} fields, got {len(values)}", line)
        records.append(_parse_row(dict(zip(HEADER, values)), line))
    return records


def read_shift_logs(paths: Iterable[str | Path]) -> list[ShiftRecord]:
    """Parse several files and concatenate in the given order."""
    records: list[ShiftRecord] = []
    for path in paths:
        with open(path, newline="", encoding="utf-8") as fh:
            try:
                records.extend(parse_shift_log(fh))
            except ShiftLogError as exc:
                err = ShiftLogError(f"{path}: {exc}")
                err.line, err.field = exc.line, exc.field
                raise err from None
    return records


def _fmt_duration(d: float) -> str:
    return str(int(d)) if float(d).is_integer() else repr(float(d))


def write_shift_log(records: Iterable[ShiftRecord], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(HEADER)
    for r in records:
        eh, ea = r.events_home, r.events_away
        writer.writerow([
            r.season, r.game_id, _fmt_duration(r.duration_s), r.strength.value, r.zone_start.value,
            ";".join(r.home_skaters), ";".join(r.away_skaters),
            r.home_goalie or "", r.away_goalie or "",
            eh.goals, eh.shots_on_goal, eh.missed_shots, eh.blocked_shots,
            ea.goals, ea.shots_on_goal, ea.missed_shots, ea.blocked_shots,
        ])


def shift_log_text(records: Iterable[ShiftRecord]) -> str:
    buf = io.StringIO()
    write_shift_log(records, buf)
    return buf.getvalue()


def partition(records: Iterable[ShiftRecord]) -> tuple[list[ShiftRecord], list[ShiftRecord]]:
    """Split into (even strength, special teams); records missing a goalie go to neither."""
    ev, st = [], []
    for r in records:
        if not r.has_both_goalies:
            continue
        (ev if r.strength is Strength.EV else st).append(r)
    return ev, st


_HOME_VIEW_ZONE = {ZoneStart.OFF_HOME: Zone.OFF, ZoneStart.DEF_HOME: Zone.DEF}
_AWAY_VIEW_ZONE = {ZoneStart.OFF_HOME: Zone.DEF, ZoneStart.DEF_HOME: Zone.OFF}


def to_observations(records: Iterable[ShiftRecord], stat: Stat) -> list[Observation]:
    """Two rows per shift: home team on offense, then away team on offense."""
    out = []
    for r in records:
        if r.strength is Strength.EV:
            home_role = away_role = StrengthRole.EV
        elif r.strength is Strength.PP_HOME:
            home_role, away_role = StrengthRole.PP_OFFENSE, StrengthRole.SH_OFFENSE
        else:
            home_role, away_role = StrengthRole.SH_OFFENSE, StrengthRole.PP_OFFENSE
        d = float(r.duration_s)
        out.append(Observation(
            weight=d,
            response=SECONDS_PER_HOUR * r.events_home.count(stat) / d,
            offense_players=r.home_skaters,
            defense_players=r.away_skaters,
            defending_goalie=r.away_goalie,
            zone=_HOME_VIEW_ZONE.get(r.zone_start, Zone.NEUTRAL),
            strength_role=home_role,
            season=r.season,
        ))
        out.append(Observation(
            weight=d,
            response=SECONDS_PER_HOUR * r.events_away.count(stat) / d,
            offense_players=r.away_skaters,
            defense_players=r.home_skaters,
            defending_goalie=r.home_goalie,
            zone=_AWAY_VIEW_ZONE.get(r.zone_start, Zone.NEUTRAL),
            strength_role=away_role,
            season=r.season,
        ))
    return out


@dataclass(frozen=True)
class ShiftSummary:
    """Shift-length and ice-time summary of a set of records.

    ``ice_time`` maps player id to seconds by :class:`StrengthRole` value
    ("EV", "PP_OFFENSE" = on ice for the advantaged team, "SH_OFFENSE" =
    on ice while shorthanded). Histograms share ``bin_edges``.
    """

    mean_duration: dict[str, float]
    shift_count: dict[str, int]
    ice_time: dict[str, dict[str, float]]
    goalies: frozenset[str]
    bin_edges: np.ndarray
    histogram: dict[str, np.ndarray]
    goal_histogram: dict[str, np.ndarray]


def summarize_shifts(records: Sequence[ShiftRecord], bin_width: float = 5.0) -> ShiftSummary:
    durations: dict[str, list[float]] = {"EV": [], "ST": []}
    goal_durations: dict[str, list[float]] = {"EV": [], "ST": []}
    ice: dict[str, dict[str, float]] = defaultdict(lambda: {r.value: 0.0 for r in StrengthRole})
    goalies = set()
    for r in records:
        part = "EV" if r.strength is Strength.EV else "ST"
        durations[part].append(r.duration_s)
        if r.events_home.goals or r.events_away.goals:
            goal_durations[part].append(r.duration_s)
        if r.strength is Strength.EV:
            home_role = away_role = StrengthRole.EV.value
        elif r.strength is Strength.PP_HOME:
            home_role, away_role = StrengthRole.PP_OFFENSE.value, StrengthRole.SH_OFFENSE.value
        else:
            home_role, away_role = StrengthRole.SH_OFFENSE.value, StrengthRole.PP_OFFENSE.value
        for pid in r.home_skaters:
            ice[pid][home_role] += r.duration_s
        for pid in r.away_skaters:
            ice[pid][away_role] += r.duration_s
        for g, role in ((r.home_goalie, home_role), (r.away_goalie, away_role)):
            if g:
                goalies.add(g)
                ice[g][role] += r.duration_s
    longest = max((max(v) for v in durations.values() if v), default=bin_width)
    edges = np.arange(0.0, longest + bin_width, bin_width)
    if edges.size < 2:
        edges = np.array([0.0, bin_width])
    hist = {k: np.histogram(v, bins=edges)[0] for k, v in durations.items()}
    ghist = {k: np.histogram(v, bins=edges)[0] for k, v in goal_durations.items()}
    return ShiftSummary(
        mean_duration={k: (float(np.mean(v)) if v else float("nan")) for k, v in durations.items()},
        shift_count={k: len(v) for k, v in durations.items()},
        ice_time={k: dict(v) for k, v in sorted(ice.items())},
        goalies=frozenset(goalies),
        bin_edges=edges,
        histogram=hist,
        goal_histogram=ghist,
    )
