"""Synthetic leagues with known player contributions.

Each team's event count in a shift is Poisson with rate (per 60 minutes)
equal to a strength-specific baseline plus the on-ice offense truths plus
the opposing defense truths plus a zone-start effect. Corsi events are
drawn first and thinned to Fenwick, shots and goals, so the four counts
nest within every shift. Truths are on the shots scale; the other stats
follow by fixed ratios, and goalies shift only the goals process.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .design import ColumnKind
from .shiftlog import EventCounts, ShiftRecord, Strength, ZoneStart, write_shift_log

log = logging.getLogger(__name__)

ROLES = ("EV_off", "EV_def", "PP_off", "PP_def", "SH_off", "SH_def")

# catalog column kind -> truth key
KIND_TO_ROLE = {
    ColumnKind.SKATER_OFF: "EV_off",
    ColumnKind.SKATER_DEF: "EV_def",
    ColumnKind.SKATER_PP_OFF: "PP_off",
    ColumnKind.SKATER_PP_DEF: "PP_def",
    ColumnKind.SKATER_SH_OFF: "SH_off",
    ColumnKind.SKATER_SH_DEF: "SH_def",
}

_ZONES = (ZoneStart.OFF_HOME, ZoneStart.DEF_HOME, ZoneStart.NEUTRAL, ZoneStart.NONE)


@dataclass(frozen=True)
class SimConfig:
    teams: int = 30
    forwards: int = 12
    defensemen: int = 6
    goalies: int = 2
    seasons: int = 1
    first_season: int = 2007
    games_per_season: int = 82
    game_seconds: float = 3600.0
    ev_shift_mean: float = 30.0
    st_shift_extra: float = 4.5
    penalties_per_game: float = 4.0
    pp_seconds: float = 120.0
    four_on_four_prob: float = 0.03
    empty_net_prob: float = 0.3
    empty_net_seconds: float = 60.0
    # shots on goal per 60 minutes for the offense team
    base_shots_ev: float = 36.0
    base_shots_pp: float = 50.0
    base_shots_sh: float = 15.0
    shots_per_goal: float = 10.0
    shots_per_fenwick: float = 0.75
    fenwick_per_corsi: float = 0.75
    zone_off_effect: float = 4.0
    zone_def_effect: float = -4.0
    zone_probs: tuple[float, float, float, float] = (0.28, 0.28, 0.24, 0.20)
    # standard deviations of true contributions (shots/60)
    sd_ev_off: float = 6.0
    sd_ev_def: float = 2.5
    sd_pp_off: float = 5.0
    sd_pp_def: float = 2.0
    sd_sh_off: float = 2.0
    sd_sh_def: float = 4.0
    sd_goalie: float = 0.4
    line_mixing: float = 0.3
    coupled_pairs: int = 0
    coupling: float = 1.0
    persistence: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.coupling <= 1.0:
            raise ValueError("coupling must lie in [0, 1]")
        if not 0.0 <= self.persistence <= 1.0:
            raise ValueError("persistence must lie in [0, 1]")
        if self.teams < 2 or self.teams % 2:
            raise ValueError("need an even number of teams (at least 2)")
        if min(self.base_shots_ev, self.base_shots_pp, self.base_shots_sh, self.shots_per_goal) <= 0:
            raise ValueError("event rates must be positive")
        if self.forwards < 6 or self.defensemen < 4 or self.goalies < 1:
            raise ValueError("rosters need at least 6 forwards, 4 defensemen and 1 goalie")

    @property
    def goals_per_shot(self) -> float:
        return 1.0 / self.shots_per_goal

    @property
    def stat_scale(self) -> dict[str, float]:
        """Multiplier taking a shots-scale truth to each statistic's scale."""
        return {
            "goals": self.goals_per_shot,
            "shots": 1.0,
            "fenwick": 1.0 / self.shots_per_fenwick,
            "corsi": 1.0 / (self.shots_per_fenwick * self.fenwick_per_corsi),
        }


@dataclass(frozen=True)
class TrueAbility:
    player_id: str
    position: str
    team: str
    contributions: dict[str, float]
    persistence: float = 0.9

    def evolve(self, rng: np.random.Generator, sds: dict[str, float]) -> "TrueAbility":
        rho = self.persistence
        new = {k: rho * v + math.sqrt(1.0 - rho * rho) * sds[k] * rng.standard_normal()
               for k, v in self.contributions.items()}
        return TrueAbility(self.player_id, self.position, self.team, new, rho)


@dataclass
class SimResult:
    records: list[ShiftRecord]
    truth: dict
    clamped_shifts: int = 0
    total_team_shifts: int = 0


def _sds(config: SimConfig) -> dict[str, float]:
    return {"EV_off": config.sd_ev_off, "EV_def": config.sd_ev_def, "PP_off": config.sd_pp_off,
            "PP_def": config.sd_pp_def, "SH_off": config.sd_sh_off, "SH_def": config.sd_sh_def,
            "G_def": config.sd_goalie}


def team_code(t: int) -> str:
    return f"T{t:02d}"


def make_abilities(config: SimConfig) -> list[TrueAbility]:
    """Random season-one truths; defensemen get smaller offensive spreads."""
    rng = np.random.default_rng([config.seed, 7])
    sds = _sds(config)
    out = []
    for t in range(config.teams):
        tc = team_code(t)
        for pos, count in (("F", config.forwards), ("D", config.defensemen)):
            for i in range(count):
                shrink = 0.6 if pos == "D" else 1.0
                c = {}
                for role in ROLES:
                    sd = sds[role] * (shrink if role.endswith("off") else 1.0)
                    c[role] = float(sd * rng.standard_normal())
                out.append(TrueAbility(f"{tc}{pos}{i:02d}", pos, tc, c, config.persistence))
        for i in range(config.goalies):
            out.append(TrueAbility(f"{tc}G{i}", "G", tc, {"G_def": float(sds["G_def"] * rng.standard_normal())},
                                   config.persistence))
    # center so truths have league mean zero per role
    for role in ROLES + ("G_def",):
        vals = [a.contributions[role] for a in out if role in a.contributions]
        mean = float(np.mean(vals))
        for a in out:
            if role in a.contributions:
                a.contributions[role] -= mean
    return out


def coupled_pairs(config: SimConfig) -> list[tuple[str, str]]:
    """Designated always-together pairs: the first two forwards of the first teams."""
    if config.coupled_pairs > config.teams:
        raise ValueError("at most one coupled pair per team")
    return [(f"{team_code(t)}F00", f"{team_code(t)}F01") for t in range(config.coupled_pairs)]


class _Team:
    def __init__(self, t: int, config: SimConfig):
        tc = team_code(t)
        self.code = tc
        self.forwards = [f"{tc}F{i:02d}" for i in range(config.forwards)]
        self.defense = [f"{tc}D{i:02d}" for i in range(config.defensemen)]
        self.goalies = [f"{tc}G{i}" for i in range(config.goalies)]
        n_lines = config.forwards // 3
        n_pairs = config.defensemen // 2
        self.line_w = _normalized([n_lines - i + 0.5 for i in range(n_lines)])
        self.pair_w = _normalized([n_pairs - i + 0.5 for i in range(n_pairs)])


def _normalized(v):
    v = np.asarray(v, dtype=float)
    return v / v.sum()


def _mix(group: list[str], chosen: list[str], rate: float, rng: np.random.Generator) -> list[str]:
    chosen = list(chosen)
    for k in range(len(chosen)):
        if rng.random() < rate:
            pool = [p for p in group if p not in chosen]
            if pool:
                chosen[k] = pool[rng.integers(len(pool))]
    return chosen


def _draw_unit(team: _Team, n_f: int, n_d: int, kind: str, config: SimConfig, rng) -> tuple[list[str], list[str]]:
    if kind == "pp":
        unit = int(rng.random() < 0.35)
        f = team.forwards[3 * unit: 3 * unit + 3][:n_f]
        d = team.defense[2 * unit: 2 * unit + 2][:n_d]
    elif kind == "pk":
        pk = team.forwards[3:9] if len(team.forwards) >= 9 else team.forwards
        f = [pk[i] for i in rng.choice(len(pk), size=n_f, replace=False)]
        d = [team.defense[i] for i in rng.choice(len(team.defense), size=n_d, replace=False)]
    else:
        line = rng.choice(len(team.line_w), p=team.line_w)
        pair = rng.choice(len(team.pair_w), p=team.pair_w)
        f = team.forwards[3 * line: 3 * line + 3]
        d = team.defense[2 * pair: 2 * pair + 2]
        while len(f) < n_f:
            f = f + [p for p in team.forwards if p not in f][:1]
        f = f[:n_f]
        d = d[:n_d]
    return _mix(team.forwards, f, config.line_mixing, rng), _mix(team.defense, d, config.line_mixing, rng)


def _apply_coupling(players: list[str], pairs, coupling: float, rng) -> list[str]:
    players = list(players)
    for a, b in pairs:
        ina, inb = a in players, b in players
        if ina == inb or rng.random() >= coupling:
            continue
        present, absent = (a, b) if ina else (b, a)
        pos = present[3]
        slots = [i for i, p in enumerate(players) if p[3] == pos and p != present]
        if slots:
            players[slots[rng.integers(len(slots))]] = absent
    return players


def _schedule(config: SimConfig, rng) -> list[tuple[int, int]]:
    games = []
    teams = np.arange(config.teams)
    for _ in range(config.games_per_season):
        perm = rng.permutation(teams)
        for i in range(0, config.teams, 2):
            h, a = (perm[i], perm[i + 1]) if rng.random() < 0.5 else (perm[i + 1], perm[i])
            games.append((int(h), int(a)))
    return games


def _duration(mean: float, cap: float, rng) -> float:
    d = 1.0 + rng.gamma(2.0, (mean - 1.0) / 2.0)
    return float(max(1, min(round(d), int(cap))))


def _simulate_game(config, season, game_id, home: _Team, away: _Team, ab, pairs, rng):
    """Roster/timing for one game; returns shift skeletons."""
    T = config.game_seconds
    n_pen = rng.poisson(config.penalties_per_game)
    pen_times = sorted(float(x) for x in rng.uniform(0, T - config.pp_seconds - 60, size=n_pen))
    pen_sides = [int(rng.integers(2)) for _ in range(n_pen)]  # 0: home penalized
    hg = home.goalies[0] if rng.random() < 0.8 or len(home.goalies) == 1 else home.goalies[1]
    ag = away.goalies[0] if rng.random() < 0.8 or len(away.goalies) == 1 else away.goalies[1]
    pulled = None
    if rng.random() < config.empty_net_prob:
        pulled = int(rng.integers(2))
    en_start = T - config.empty_net_seconds if pulled is not None else T
    t = 0.0
    pp_end, pp_side = -1.0, None
    shifts = []
    while t < T - 0.5:
        while pen_times and pen_times[0] <= t:
            pen_times.pop(0)
            side = pen_sides.pop(0)
            if pp_side is None or t >= pp_end:
                pp_end, pp_side = t + config.pp_seconds, side
        if pp_side is not None and t >= pp_end:
            pp_side = None
        # strength changes wait for the next line change; only the empty net cuts a shift short
        next_change = en_start if t < en_start else T
        in_pp = pp_side is not None
        en = t >= en_start
        mean = config.ev_shift_mean + (config.st_shift_extra if in_pp else 0.0)
        dur = _duration(mean, max(1.0, math.ceil(next_change - t)), rng)
        zone = _ZONES[rng.choice(4, p=config.zone_probs)]
        h_goalie, a_goalie = hg, ag
        if en and pulled == 0:
            hf, hd = _draw_unit(home, 4, 2, "pp", config, rng)
            af, ad = _draw_unit(away, 3, 2, "ev", config, rng)
            h_goalie = None
        elif en and pulled == 1:
            hf, hd = _draw_unit(home, 3, 2, "ev", config, rng)
            af, ad = _draw_unit(away, 4, 2, "pp", config, rng)
            a_goalie = None
        elif in_pp and pp_side == 1:  # away penalized, home on the power play
            hf, hd = _draw_unit(home, 3, 2, "pp", config, rng)
            af, ad = _draw_unit(away, 2, 2, "pk", config, rng)
        elif in_pp:
            hf, hd = _draw_unit(home, 2, 2, "pk", config, rng)
            af, ad = _draw_unit(away, 3, 2, "pp", config, rng)
        else:
            nf = 2 if rng.random() < config.four_on_four_prob else 3
            hf, hd = _draw_unit(home, nf, 2, "ev", config, rng)
            af, ad = _draw_unit(away, nf, 2, "ev", config, rng)
        hs = _apply_coupling(hf + hd, pairs, config.coupling, rng)
        as_ = _apply_coupling(af + ad, pairs, config.coupling, rng)
        nh, na = len(hs), len(as_)
        strength = Strength.EV if nh == na else (Strength.PP_HOME if nh > na else Strength.PP_AWAY)
        shifts.append((dur, strength, zone, tuple(hs), tuple(as_), h_goalie, a_goalie))
        t += dur
    return shifts


def _team_rate(config, off, deff, def_goalie, strength_role, zone_sign, ab):
    """Shots/60 and goal probability for one team on offense."""
    if strength_role == "EV":
        base, ok, dk = config.base_shots_ev, "EV_off", "EV_def"
    elif strength_role == "PP":
        base, ok, dk = config.base_shots_pp, "PP_off", "SH_def"
    else:
        base, ok, dk = config.base_shots_sh, "SH_off", "PP_def"
    rate = base + sum(ab[p][ok] for p in off) + sum(ab[q][dk] for q in deff)
    if zone_sign > 0:
        rate += config.zone_off_effect
    elif zone_sign < 0:
        rate += config.zone_def_effect
    return rate, (ab[def_goalie]["G_def"] if def_goalie else 0.0)


def simulate(config: SimConfig, abilities: list[TrueAbility] | None = None) -> SimResult:
    abilities = abilities if abilities is not None else make_abilities(config)
    sds = _sds(config)
    teams = [_Team(t, config) for t in range(config.teams)]
    pairs = coupled_pairs(config)
    pG, pS, pF = config.goals_per_shot, config.shots_per_fenwick, config.fenwick_per_corsi
    records: list[ShiftRecord] = []
    truth_players = {a.player_id: {"position": a.position, "team": a.team, "persistence": a.persistence,
                                   "seasons": {}} for a in abilities}
    current = list(abilities)
    clamped = total = 0
    for s in range(config.seasons):
        season = str(config.first_season + s)
        if s > 0:
            evo_rng = np.random.default_rng([config.seed, 11, s])
            current = [a.evolve(evo_rng, sds) for a in current]
        ab = {a.player_id: a.contributions for a in current}
        for a in current:
            truth_players[a.player_id]["seasons"][season] = dict(a.contributions)
        sched_rng = np.random.default_rng([config.seed, 13, s])
        for g, (h, a) in enumerate(_schedule(config, sched_rng)):
            rng = np.random.default_rng([config.seed, 17, s, g])
            game_id = f"{season}{g:05d}"
            skel = _simulate_game(config, season, game_id, teams[h], teams[a], ab, pairs, rng)
            for dur, strength, zone, hs, as_, hgl, agl in skel:
                if strength is Strength.EV:
                    hr, ar = "EV", "EV"
                elif strength is Strength.PP_HOME:
                    hr, ar = "PP", "SH"
                else:
                    hr, ar = "SH", "PP"
                zs = 1 if zone is ZoneStart.OFF_HOME else (-1 if zone is ZoneStart.DEF_HOME else 0)
                counts = []
                for off, deff, goalie, role, sign in ((hs, as_, agl, hr, zs), (as_, hs, hgl, ar, -zs)):
                    rate, g_shift = _team_rate(config, off, deff, goalie, role, sign, ab)
                    total += 1
                    if rate < 0:
                        clamped += 1
                    rate = max(rate, 0.0)
                    corsi = rng.poisson(dur / 3600.0 * rate / (pS * pF))
                    fen = rng.binomial(corsi, pF)
                    sog = rng.binomial(fen, pS)
                    p_goal = min(max(pG + g_shift / rate, 0.0), 1.0) if rate > 0 else 0.0
                    goals = rng.binomial(sog, p_goal)
                    counts.append(EventCounts(int(goals), int(sog), int(fen - sog), int(corsi - fen)))
                records.append(ShiftRecord(season, game_id, dur, strength, zone, hs, as_, hgl, agl,
                                           counts[0], counts[1]))
    if total and clamped / total > 0.01:
        log.warning("%d of %d team-shifts (%.1f%%) had a negative event rate clamped to zero",
                    clamped, total, 100.0 * clamped / total)
    truth = {
        "units": "shots per 60 minutes; defensive values raise the opponent's rate",
        "stat_scale": config.stat_scale,
        "zone": {"off": config.zone_off_effect, "def": config.zone_def_effect},
        "coupled_pairs": [list(p) for p in pairs],
        "config": asdict(config),
        "players": truth_players,
    }
    return SimResult(records, truth, clamped, total)


def write_simulation(result: SimResult, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"shifts": out / "shifts.csv", "truth": out / "truth.json", "roster": out / "roster.csv"}
    with open(paths["shifts"], "w", newline="", encoding="utf-8") as fh:
        write_shift_log(result.records, fh)
    with open(paths["truth"], "w", encoding="utf-8") as fh:
        json.dump(result.truth, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(paths["roster"], "w", encoding="utf-8") as fh:
        fh.write("player_id,pos,team\n")
        for pid, info in sorted(result.truth["players"].items()):
            fh.write(f"{pid},{info['position']},{info['team']}\n")
    return paths


def truth_component(truth: dict, role: str, stat: str = "shots", season: str | None = None) -> dict[str, float]:
    """True per-60 values of one role on a statistic's scale (seasons averaged if none given)."""
    scale = truth["stat_scale"][stat] if role != "G_def" else 1.0
    out = {}
    for pid, info in truth["players"].items():
        seasons = info["seasons"]
        vals = [seasons[season][role]] if season is not None and season in seasons else \
            [v[role] for v in seasons.values() if role in v]
        if vals and role in next(iter(seasons.values())):
            out[pid] = scale * float(np.mean(vals))
    return out


@dataclass(frozen=True)
class RecoveryMetrics:
    correlation: float
    rmse: float
    n_players: int


def recovery_error(truth: dict[str, float], fit, kind: ColumnKind,
                   toi_minutes: dict[str, float] | None = None, min_toi: float = 0.0) -> RecoveryMetrics:
    """Correlation and RMSE between true and fitted per-60 values for one column kind."""
    est, tru = [], []
    for i, spec in enumerate(fit.catalog):
        if spec.kind is not kind or spec.player_id not in truth or not fit.active[i]:
            continue
        if toi_minutes is not None and toi_minutes.get(spec.player_id, 0.0) < min_toi:
            continue
        est.append(fit.coefficients[i])
        tru.append(truth[spec.player_id])
    if not est:
        raise ValueError("no overlapping players between fit and truth")
    est, tru = np.asarray(est), np.asarray(tru)
    corr = float(np.corrcoef(est, tru)[0, 1]) if len(est) > 1 else float("nan")
    return RecoveryMetrics(corr, float(np.sqrt(np.mean((est - tru) ** 2))), len(est))
