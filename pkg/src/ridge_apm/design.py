"""Sparse design matrices for the adjusted plus-minus regression.

Column layout: intercept, offensive-zone start, defensive-zone start, then
one block of role columns per skater (sorted by id), then goalie defensive
columns when the response is goals.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property
from typing import Iterable, Sequence, TextIO

import numpy as np
import scipy.sparse as sp

from .shiftlog import Observation, Stat, StrengthRole, Zone


class Partition(str, Enum):
    EV = "ev"
    ST = "st"


class ColumnKind(str, Enum):
    INTERCEPT = "INTERCEPT"
    ZONE_OFF = "ZONE_OFF"
    ZONE_DEF = "ZONE_DEF"
    SKATER_OFF = "SKATER_OFF"
    SKATER_DEF = "SKATER_DEF"
    GOALIE_DEF = "GOALIE_DEF"
    SKATER_PP_OFF = "SKATER_PP_OFF"
    SKATER_PP_DEF = "SKATER_PP_DEF"
    SKATER_SH_OFF = "SKATER_SH_OFF"
    SKATER_SH_DEF = "SKATER_SH_DEF"
    # generic column for problems built straight from arrays
    OTHER = "OTHER"


EV_KINDS = (ColumnKind.SKATER_OFF, ColumnKind.SKATER_DEF)
ST_KINDS = (ColumnKind.SKATER_PP_OFF, ColumnKind.SKATER_PP_DEF,
            ColumnKind.SKATER_SH_OFF, ColumnKind.SKATER_SH_DEF)


@dataclass(frozen=True)
class ColumnSpec:
    kind: ColumnKind
    player_id: str | None = None

    @property
    def penalized(self) -> bool:
        return self.kind is not ColumnKind.INTERCEPT


class ColumnCatalog:
    """Ordered column descriptions with (kind, player) lookup."""

    def __init__(self, entries: Sequence[ColumnSpec], partition: Partition | None = None,
                 stat: Stat | None = None):
        self.entries = tuple(entries)
        self.partition = partition
        self.stat = stat
        self._index: dict[tuple[ColumnKind, str | None], int] = {}
        for i, e in enumerate(self.entries):
            key = (e.kind, e.player_id)
            if key in self._index and e.kind is not ColumnKind.OTHER:
                raise ValueError(f"duplicate column {key}")
            self._index[key] = i

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i: int) -> ColumnSpec:
        return self.entries[i]

    def index(self, kind: ColumnKind, player_id: str | None = None) -> int:
        try:
            return self._index[(kind, player_id)]
        except KeyError:
            raise KeyError(f"no column for {kind.value} {player_id!r}") from None

    def get(self, kind: ColumnKind, player_id: str | None = None) -> int | None:
        return self._index.get((kind, player_id))

    @property
    def penalized(self) -> np.ndarray:
        return np.array([e.penalized for e in self.entries], dtype=bool)

    @cached_property
    def skaters(self) -> tuple[str, ...]:
        seen = dict.fromkeys(e.player_id for e in self.entries
                             if e.player_id is not None and e.kind is not ColumnKind.GOALIE_DEF)
        return tuple(seen)

    @cached_property
    def goalies(self) -> tuple[str, ...]:
        return tuple(e.player_id for e in self.entries if e.kind is ColumnKind.GOALIE_DEF)

    def label(self, i: int) -> str:
        e = self.entries[i]
        return e.kind.value if e.player_id is None else f"{e.kind.value}:{e.player_id}"

    @classmethod
    def generic(cls, penalized: Sequence[bool]) -> "ColumnCatalog":
        return cls([ColumnSpec(ColumnKind.OTHER if pen else ColumnKind.INTERCEPT) for pen in penalized])


def build_catalog(observations: Sequence[Observation], stat: Stat, partition: Partition) -> ColumnCatalog:
    if not observations:
        raise ValueError("cannot build a catalog from an empty observation list")
    skaters: set[str] = set()
    goalies: set[str] = set()
    for o in observations:
        skaters.update(o.offense_players)
        skaters.update(o.defense_players)
        if o.defending_goalie:
            goalies.add(o.defending_goalie)
    entries = [ColumnSpec(ColumnKind.INTERCEPT), ColumnSpec(ColumnKind.ZONE_OFF), ColumnSpec(ColumnKind.ZONE_DEF)]
    kinds = EV_KINDS if partition is Partition.EV else ST_KINDS
    for pid in sorted(skaters):
        entries.extend(ColumnSpec(k, pid) for k in kinds)
    if stat is Stat.GOALS:
        entries.extend(ColumnSpec(ColumnKind.GOALIE_DEF, g) for g in sorted(goalies))
    return ColumnCatalog(entries, partition, stat)


@dataclass(frozen=True, eq=False)
class DesignProblem:
    """Weighted least-squares problem ``y ~ X beta`` with weights ``w``.

    ``X`` holds the raw (unscaled) design. After :func:`standardize`,
    ``scales`` carries the per-column factors ``s_k`` and the standardized
    matrix is ``X / s``. Columns flagged in ``degenerate`` never enter a solve.
    """

    X: sp.csr_matrix
    w: np.ndarray
    y: np.ndarray
    catalog: ColumnCatalog
    scales: np.ndarray | None = None
    degenerate: np.ndarray | None = None

    def __post_init__(self):
        n, p = self.X.shape
        if self.w.shape != (n,) or self.y.shape != (n,):
            raise ValueError("w and y must have one entry per row of X")
        if len(self.catalog) != p:
            raise ValueError("catalog size does not match the number of columns")
        if np.any(~np.isfinite(self.w)) or np.any(self.w <= 0):
            raise ValueError("weights must be positive and finite")

    @classmethod
    def from_arrays(cls, X, w, y, penalized: Sequence[bool] | None = None) -> "DesignProblem":
        X = sp.csr_matrix(np.asarray(X, dtype=float) if not sp.issparse(X) else X, dtype=float)
        if penalized is None:
            penalized = [True] * X.shape[1]
        return cls(X, np.asarray(w, dtype=float).copy(), np.asarray(y, dtype=float).copy(),
                   ColumnCatalog.generic(penalized))

    @property
    def n_obs(self) -> int:
        return self.X.shape[0]

    @property
    def n_cols(self) -> int:
        return self.X.shape[1]

    @property
    def penalized(self) -> np.ndarray:
        return self.catalog.penalized

    @property
    def is_standardized(self) -> bool:
        return self.scales is not None

    @property
    def active(self) -> np.ndarray:
        if self.degenerate is None:
            return np.ones(self.n_cols, dtype=bool)
        return ~self.degenerate

    @cached_property
    def normalized_weights(self) -> np.ndarray:
        return self.w / self.w.mean()

    @cached_property
    def standardized_active_X(self) -> sp.csr_matrix:
        """``X / s`` restricted to the active (non-degenerate) columns."""
        if self.scales is None:
            raise ValueError("problem is not standardized")
        act = np.flatnonzero(self.active)
        return sp.csr_matrix(self.X[:, act] @ sp.diags(1.0 / self.scales[act]))

    def permuted(self, order: Sequence[int]) -> "DesignProblem":
        order = np.asarray(order)
        return replace(self, X=sp.csr_matrix(self.X[order]), w=self.w[order], y=self.y[order])


def assemble(observations: Sequence[Observation], catalog: ColumnCatalog) -> DesignProblem:
    """Build the 0/1 design, duration weights and per-60 responses."""
    st = catalog.partition is Partition.ST
    with_goalies = catalog.stat is Stat.GOALS
    z_off = catalog.index(ColumnKind.ZONE_OFF)
    z_def = catalog.index(ColumnKind.ZONE_DEF)
    col_of = catalog._index

    def lookup(kind: ColumnKind, pid: str) -> int:
        try:
            return col_of[(kind, pid)]
        except KeyError:
            raise KeyError(f"player {pid!r} has no {kind.value} column in the catalog") from None

    indptr = [0]
    indices: list[int] = []
    for o in observations:
        if st:
            if o.strength_role is StrengthRole.PP_OFFENSE:
                off_kind, def_kind = ColumnKind.SKATER_PP_OFF, ColumnKind.SKATER_SH_DEF
            elif o.strength_role is StrengthRole.SH_OFFENSE:
                off_kind, def_kind = ColumnKind.SKATER_SH_OFF, ColumnKind.SKATER_PP_DEF
            else:
                raise ValueError("even-strength observation passed to a special-teams catalog")
        else:
            if o.strength_role is not StrengthRole.EV:
                raise ValueError("special-teams observation passed to an even-strength catalog")
            off_kind, def_kind = ColumnKind.SKATER_OFF, ColumnKind.SKATER_DEF
        row = [0]
        if o.zone is Zone.OFF:
            row.append(z_off)
        elif o.zone is Zone.DEF:
            row.append(z_def)
        row.extend(lookup(off_kind, pid) for pid in o.offense_players)
        row.extend(lookup(def_kind, pid) for pid in o.defense_players)
        if with_goalies and o.defending_goalie:
            row.append(lookup(ColumnKind.GOALIE_DEF, o.defending_goalie))
        row.sort()
        indices.extend(row)
        indptr.append(len(indices))
    n = len(observations)
    X = sp.csr_matrix(
        (np.ones(len(indices)), np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
        shape=(n, len(catalog)),
    )
    w = np.fromiter((o.weight for o in observations), dtype=float, count=n)
    y = np.fromiter((o.response for o in observations), dtype=float, count=n)
    return DesignProblem(X, w, y, catalog)


def standardize(problem: DesignProblem) -> DesignProblem:
    """Scale penalized columns to unit weighted RMS (weights ``w / sum(w)``).

    The raw matrix is kept, so standardizing twice yields the same scales.
    Zero columns are flagged degenerate and get a placeholder scale of 1.
    """
    pw = problem.w / problem.w.sum()
    sq = np.asarray(problem.X.multiply(problem.X).T @ pw).ravel()
    rms = np.sqrt(sq)
    pen = problem.penalized
    degenerate = pen & (rms == 0.0)
    scales = np.where(pen & ~degenerate, rms, 1.0)
    return replace(problem, scales=scales, degenerate=degenerate)


def write_catalog_csv(problem: DesignProblem, stream: TextIO) -> None:
    """Debug dump: ``column_index,kind,player_id,penalized,scale``."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["column_index", "kind", "player_id", "penalized", "scale"])
    scales = problem.scales if problem.scales is not None else np.full(problem.n_cols, np.nan)
    for i, e in enumerate(problem.catalog):
        writer.writerow([i, e.kind.value, e.player_id or "", int(e.penalized), repr(float(scales[i]))])


def row_columns(problem: DesignProblem, i: int) -> list[ColumnSpec]:
    """Column specs with a nonzero entry in row ``i``."""
    lo, hi = problem.X.indptr[i], problem.X.indptr[i + 1]
    return [problem.catalog[j] for j in problem.X.indices[lo:hi]]


def offense_minutes(problem: DesignProblem, kinds: Iterable[ColumnKind] = (ColumnKind.SKATER_OFF,)) -> dict[str, float]:
    """Weighted column sums / 60 for the given kinds: minutes per player."""
    sums = np.asarray(problem.X.T @ problem.w).ravel() / 60.0
    kinds = set(kinds)
    return {e.player_id: float(sums[i]) for i, e in enumerate(problem.catalog) if e.kind in kinds}
