import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ridge_apm.design import ColumnKind, Partition
from ridge_apm.rating import (
    PER60_KEYS,
    SEASON_KEYS,
    STATS,
    STRENGTHS,
    PlayerTime,
    ShootingPercentageError,
    ViewMode,
    build_rating_table,
    compute_shooting_percentages,
    ice_time,
    per60_key,
    per_season,
    positional_view,
    ratings_to_json,
    read_ratings_csv,
    read_roster,
    rescale_to_expected_goals,
    season_key,
    snap,
    write_ratings_csv,
)
from ridge_apm.shiftlog import Stat, Strength
from ridge_apm.simgen import SimConfig, simulate

from _support import AWAY5, HOME5, fit_all, record


def _pp(eh=(0, 0, 0, 0), ea=(0, 0, 0, 0), duration=40):
    return record(duration=duration, strength=Strength.PP_HOME, away=AWAY5[:4], eh=eh, ea=ea)


class TestShootingPercentages:
    def test_ten_shots_per_goal(self):
        recs = [record(eh=(1, 10, 0, 0)), record(ea=(2, 20, 3, 1)), _pp(eh=(1, 5, 0, 0), ea=(0, 2, 0, 0))]
        assert compute_shooting_percentages(recs).goals_per_shot["EV"] == pytest.approx(0.10, rel=1e-15)

    def test_no_misses_or_blocks(self):
        pct = compute_shooting_percentages([record(eh=(3, 17, 0, 0)), _pp(eh=(1, 6, 0, 0), ea=(1, 4, 0, 0))])
        for s in STRENGTHS:
            assert pct.goals_per_shot[s] == pct.goals_per_fenwick[s] == pct.goals_per_corsi[s]

    def test_hand_built_power_play(self):
        recs = [record(eh=(1, 9, 0, 0)), _pp(eh=(2, 25, 10, 5), ea=(1, 3, 1, 0))]
        pct = compute_shooting_percentages(recs)
        assert pct.goals_per_shot["PP"] == 0.08
        assert pct.goals_per_fenwick["PP"] == 2 / 35
        assert pct.goals_per_corsi["PP"] == 2 / 40
        # the shorthanded side is credited to SH
        assert pct.goals_per_shot["SH"] == 1 / 3

    def test_away_power_play_is_pp(self):
        r = record(strength=Strength.PP_AWAY, home=HOME5[:4], eh=(0, 4, 0, 0), ea=(1, 5, 0, 0))
        pct = compute_shooting_percentages([record(eh=(1, 2, 0, 0)), r])
        assert pct.goals_per_shot["PP"] == 0.2 and pct.goals_per_shot["SH"] == 0.0

    def test_zero_denominator(self):
        with pytest.raises(ShootingPercentageError):
            compute_shooting_percentages([record(eh=(1, 10, 0, 0))])

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(1, 12), st.integers(0, 6), st.integers(0, 6)),
                    min_size=3, max_size=12))
    def test_nesting(self, rows):
        recs = []
        for i, (g, s, m, b) in enumerate(rows):
            ev = (min(g, s), s, m, b)
            recs.append(record(eh=ev) if i % 3 else _pp(eh=ev, ea=ev))
        recs += [record(eh=(0, 1, 0, 0)), _pp(eh=(0, 1, 0, 0), ea=(0, 1, 0, 0))]
        pct = compute_shooting_percentages(recs)
        for s in STRENGTHS:
            assert pct.goals_per_shot[s] >= pct.goals_per_fenwick[s] >= pct.goals_per_corsi[s]


class TestScalars:
    def test_rescale(self):
        pct = compute_shooting_percentages([record(eh=(1, 10, 0, 0)), _pp(eh=(1, 5, 0, 0), ea=(1, 5, 0, 0))])
        assert rescale_to_expected_goals(10.0, Stat.SHOTS, "EV", pct) == pytest.approx(1.0, rel=1e-15)
        assert rescale_to_expected_goals(0.37, Stat.GOALS, "PP", pct) == 0.37
        assert rescale_to_expected_goals(0.0, Stat.CORSI, "SH", pct) == 0.0

    def test_per_season(self):
        assert per_season(0.5, 1200.0) == 10.0
        assert per_season(0.9, 0.0) == 0.0
        assert per_season(0.5, 1200.0, seasons=4) == 2.5

    def test_snap_is_dyadic(self):
        x = snap(0.1)
        assert x * 2 ** 32 == int(x * 2 ** 32)
        assert abs(x - 0.1) <= 2 ** -33
        assert snap(math.inf) == math.inf

    def test_keys(self):
        assert len(PER60_KEYS) == 36 and len(set(PER60_KEYS)) == 36
        assert len(SEASON_KEYS) == 48 and len(set(SEASON_KEYS)) == 48
        assert per60_key(Stat.GOALS, "EV", "off") == "G_off_EV_60"
        assert season_key(Stat.CORSI, "PP", "def") == "C_def_PP"
        assert season_key(Stat.SHOTS) == "S"


@pytest.fixture(scope="module")
def league():
    res = simulate(SimConfig(teams=4, games_per_season=8, seasons=2, seed=3))
    fits = fit_all(res.records)
    pct = compute_shooting_percentages(res.records)
    toi = ice_time([r for r in res.records if r.has_both_goalies])
    roster = {pid: (info["position"], info["team"]) for pid, info in res.truth["players"].items()}
    return res, fits, pct, toi, roster


@pytest.fixture(scope="module")
def table(league):
    res, fits, pct, toi, roster = league
    return build_rating_table(fits, toi, pct, roster)


class TestTable:
    def test_one_row_per_skater(self, league, table):
        fits = league[1]
        skaters = set().union(*(set(f.catalog.skaters) for f in fits.values()))
        assert [r.player_id for r in table] == sorted(skaters)

    def test_counts(self, table):
        for r in table:
            assert len(r.per60) == 36 and len(r.per_season) == 48

    def test_closure_exact(self, table):
        for r in table:
            for t in STATS:
                L = t.letter
                for s in STRENGTHS:
                    assert r.per60[f"{L}_{s}_60"] == r.per60[f"{L}_off_{s}_60"] + r.per60[f"{L}_def_{s}_60"]
                    assert r.per_season[f"{L}_{s}"] == r.per_season[f"{L}_off_{s}"] + r.per_season[f"{L}_def_{s}"]
                for side in ("off", "def"):
                    parts = [r.per_season[f"{L}_{side}_{s}"] for s in STRENGTHS]
                    assert r.per_season[f"{L}_{side}"] == parts[0] + parts[1] + parts[2]
                assert r.per_season[L] == r.per_season[f"{L}_off"] + r.per_season[f"{L}_def"]
                # a different association gives the same bits
                assert r.per_season[L] == (r.per_season[f"{L}_EV"] + r.per_season[f"{L}_PP"]) + r.per_season[f"{L}_SH"]

    def test_hand_computed_components(self, league, table):
        res, fits, pct, toi, roster = league
        r = table[len(table) // 2]
        pid = r.player_id
        n = len(toi[pid].seasons)
        expect = {
            ("EV", "off"): (Partition.EV, ColumnKind.SKATER_OFF, 1, "EV"),
            ("EV", "def"): (Partition.EV, ColumnKind.SKATER_DEF, -1, "EV"),
            ("PP", "off"): (Partition.ST, ColumnKind.SKATER_PP_OFF, 1, "PP"),
            ("PP", "def"): (Partition.ST, ColumnKind.SKATER_PP_DEF, -1, "SH"),
            ("SH", "off"): (Partition.ST, ColumnKind.SKATER_SH_OFF, 1, "SH"),
            ("SH", "def"): (Partition.ST, ColumnKind.SKATER_SH_DEF, -1, "PP"),
        }
        for t in STATS:
            for (s, side), (part, kind, sign, pct_s) in expect.items():
                fit = fits[(t, part)]
                i = fit.catalog.get(kind, pid)
                if i is None:
                    continue
                f = 1.0 if t is Stat.GOALS else {Stat.SHOTS: pct.goals_per_shot, Stat.FENWICK: pct.goals_per_fenwick,
                                                   Stat.CORSI: pct.goals_per_corsi}[t][pct_s]
                key = f"{t.letter}_{side}_{s}_60"
                assert r.per60[key] == pytest.approx(sign * f * fit.coefficients[i], abs=2 ** -32)
                assert r.per60_err[key] == pytest.approx(f * fit.std_errors[i], rel=1e-14)
                season = r.per_season[f"{t.letter}_{side}_{s}"]
                assert season == pytest.approx(r.per60[key] * toi[pid].minutes[s] / 60 / n, abs=2 ** -31)

    def test_multi_season_average(self, league, table):
        toi = league[3]
        r = next(r for r in table if len(toi[r.player_id].seasons) == 2)
        raw = r.per60["G_off_EV_60"] * r.toi_minutes["EV"] / 60
        assert r.per_season["G_off_EV"] == pytest.approx(raw / 2, abs=2 ** -31)

    def test_missing_fit_rejected(self, league):
        res, fits, pct, toi, roster = league
        partial = dict(fits)
        del partial[(Stat.CORSI, Partition.ST)]
        with pytest.raises(ValueError, match="all 8"):
            build_rating_table(partial, toi, pct)

    def test_missing_toi_rejected(self, league):
        res, fits, pct, toi, roster = league
        toi = dict(toi)
        toi.pop(sorted(toi)[0])
        with pytest.raises(KeyError):
            build_rating_table(fits, toi, pct)

    def test_rescaling_preserves_ranking(self, league, table):
        fits = league[1]
        fit = fits[(Stat.SHOTS, Partition.EV)]
        raw = {e.player_id: fit.coefficients[i] for i, e in enumerate(fit.catalog)
               if e.kind is ColumnKind.SKATER_OFF}
        by_raw = sorted(raw, key=lambda p: (raw[p], p))
        rescaled = {r.player_id: r.per60["S_off_EV_60"] for r in table if r.player_id in raw}
        assert sorted(rescaled, key=lambda p: (rescaled[p], p)) == by_raw

    def test_csv_round_trip(self, table):
        buf = io.StringIO()
        write_ratings_csv(table, buf)
        header = buf.getvalue().splitlines()[0].split(",")
        assert header[:6] == ["player_id", "pos", "team", "G_off", "G_def", "G"]
        back = read_ratings_csv(io.StringIO(buf.getvalue()))
        for a, b in zip(table, back):
            assert a.per60 == b.per60 and a.per_season == b.per_season and a.position == b.position

    def test_json(self, table):
        import json
        rows = json.loads(ratings_to_json(table))
        assert len(rows) == len(table)
        assert set(rows[0]["per_season"]) == set(SEASON_KEYS)


def _toy_records():
    recs = []
    for k in range(12):
        recs.append(record(duration=40 + k, eh=(k % 3 == 0, 2 + k % 4, 1, 1), ea=(k % 4 == 0, 1 + k % 3, 1, 0),
                           game=f"g{k % 3}"))
        # home power plays only: a5 never kills a penalty and the away side never has one
        recs.append(_pp(eh=(k % 2, 3 + k % 2, 1, 1), ea=(0, k % 2, 0, 1), duration=50 + k))
    return recs


def test_zero_pp_time_is_degenerate():
    recs = _toy_records()
    fits = fit_all(recs, lam_per_obs=0.1)
    table = build_rating_table(fits, ice_time(recs), compute_shooting_percentages(recs))
    a1 = next(r for r in table if r.player_id == "a1")
    assert a1.toi_minutes["PP"] == 0
    assert "G_off_PP_60" in a1.degenerate and "G_def_PP_60" in a1.degenerate
    assert a1.per60["G_off_PP_60"] == 0 and a1.per60_err["G_off_PP_60"] == math.inf
    assert a1.per_season["G_off_PP"] == 0 and a1.per_season["G_PP"] == 0
    a5 = next(r for r in table if r.player_id == "a5")
    assert "G_off_SH_60" in a5.degenerate
    h1 = next(r for r in table if r.player_id == "h1")
    assert "G_off_PP_60" not in h1.degenerate and h1.per60_err["G_off_PP_60"] < math.inf


class TestPositionalView:
    def test_raw_is_identity(self, table):
        assert positional_view(table, ViewMode.RAW) == list(table)

    def test_weighted_means_vanish(self, table):
        centered = positional_view(table, ViewMode.POSITION_CENTERED)
        for pos in {r.position for r in centered}:
            group = [r for r in centered if r.position == pos]
            for t in STATS:
                for s in STRENGTHS:
                    w = np.array([r.toi_minutes[s] for r in group])
                    if w.sum() == 0:
                        continue
                    for side in ("off", "def"):
                        v = np.array([r.per60[per60_key(t, s, side)] for r in group])
                        assert abs(np.dot(w, v) / w.sum()) < 1e-10

    def test_two_positions_hand_computed(self, table):
        centered = positional_view(table, ViewMode.POSITION_CENTERED)
        key = "S_off_EV_60"
        for pos in ("F", "D"):
            idx = [i for i, r in enumerate(table) if r.position == pos]
            w = np.array([table[i].toi_minutes["EV"] for i in idx])
            v = np.array([table[i].per60[key] for i in idx])
            mean = np.dot(w, v) / w.sum()
            for i in idx:
                assert centered[i].per60[key] == pytest.approx(v[idx.index(i)] - mean, abs=2 ** -31)

    def test_constant_group_centers_to_zero(self, table):
        from dataclasses import replace

        const = []
        for r in table:
            if r.position == "F":
                r = replace(r, per60={k: (0.25 if "_EV_60" in k and "_off_" in k else v) for k, v in r.per60.items()})
            const.append(r)
        centered = positional_view(const, ViewMode.POSITION_CENTERED)
        assert all(r.per60["G_off_EV_60"] == 0.0 for r in centered if r.position == "F")

    def test_closure_survives_centering(self, table):
        for r in positional_view(table, ViewMode.POSITION_CENTERED):
            assert r.per_season["G"] == r.per_season["G_off"] + r.per_season["G_def"]
            assert r.per60["C_SH_60"] == r.per60["C_off_SH_60"] + r.per60["C_def_SH_60"]


def test_read_roster():
    roster = read_roster(io.StringIO("player_id,pos,team\np1,F,AAA\np2,D,BBB\n"))
    assert roster == {"p1": ("F", "AAA"), "p2": ("D", "BBB")}
    with pytest.raises(ValueError):
        read_roster(io.StringIO("id,position\n"))


def test_ice_time_strength_roles():
    t = ice_time([record(duration=60), _pp(duration=120)])
    assert t["h1"].minutes == {"EV": 1.0, "PP": 2.0, "SH": 0.0}
    assert t["a1"].minutes == {"EV": 1.0, "PP": 0.0, "SH": 2.0}
    assert t["a5"].minutes["SH"] == 0.0
    assert isinstance(t["h1"], PlayerTime) and t["h1"].seasons == ("2010",)
