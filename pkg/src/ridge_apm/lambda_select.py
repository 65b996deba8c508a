"""Choosing the ridge parameter.

Four signals are computed and the largest wins: randomized GCV (trace of
the hat matrix by Hutchinson's estimator), the Hoerl-Kennard-Baldwin
estimate, the smallest grid value keeping every VIF under a ceiling, and
the grid value at which coefficient paths stop moving.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .design import DesignProblem
from .solver import (
    SingularGramError,
    _Factor,
    _expand,
    _trace_and_sandwich,
    normal_equations,
    solve_ridge,
    weighted_rss,
)

log = logging.getLogger(__name__)


# per-observation reference value for the power-play goals model, reported for comparison only
REFERENCE_LAMBDA = 0.5


class StabilizationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SelectionConfig:
    """Grid bounds are per observation (``lam / N``) unless ``grid_scale='absolute'``."""

    grid_min: float = 1e-4
    grid_max: float = 1e2
    grid_points: int = 25
    grid_scale: str = "per_observation"
    refine_points: int = 7
    probes: int = 20
    seed: int = 0
    vif_ceiling: float = 10.0
    stabilization_threshold: float = 0.02
    # "signals": search for stabilization only up to the largest of the other three
    # signals; "full": search the whole grid
    stabilization_window: str = "signals"


@dataclass(frozen=True)
class GridPoint:
    lam: float
    gcv: float
    trace_estimate: float
    max_vif: float
    coef_norm: float
    refined: bool
    coefficients: tuple[float, ...] = field(repr=False)


@dataclass(frozen=True)
class LambdaReport:
    gcv_lambda: float
    hkb_lambda: float
    vif_lambda: float
    stabilization_lambda: float
    chosen: float
    grid: tuple[GridPoint, ...]
    probe_seed: int
    probe_count: int
    n_obs: int
    policy: str = "AUTO"

    @classmethod
    def fixed(cls, lam: float, n_obs: int, seed: int = 0) -> "LambdaReport":
        nan = float("nan")
        return cls(nan, nan, nan, nan, float(lam), (), seed, 0, n_obs, policy="FIXED")

    @property
    def chosen_per_observation(self) -> float:
        return self.chosen / self.n_obs

    def to_dict(self, include_grid: bool = False) -> dict:
        d = {
            "policy": self.policy,
            "chosen": self.chosen,
            "chosen_per_observation": self.chosen_per_observation,
            "reference_per_observation": REFERENCE_LAMBDA,
            "gcv_lambda": self.gcv_lambda,
            "hkb_lambda": self.hkb_lambda,
            "vif_lambda": self.vif_lambda,
            "stabilization_lambda": self.stabilization_lambda,
            "probe_seed": self.probe_seed,
            "probe_count": self.probe_count,
            "n_obs": self.n_obs,
        }
        if include_grid:
            d["grid"] = [{k: v for k, v in asdict(g).items() if k != "coefficients"} for g in self.grid]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(include_grid=True), indent=2, sort_keys=True)


def _canonical_row_order(problem: DesignProblem) -> np.ndarray:
    """Row order that depends only on row contents, not on input order."""
    h = np.random.default_rng(20240521).standard_normal((problem.n_cols, 2))
    proj = problem.X @ h
    return np.lexsort((problem.y, problem.w, proj[:, 1], proj[:, 0]))


def _probe_matrix(problem: DesignProblem, probes: int, seed: int, start: int = 0) -> np.ndarray:
    """``Xs' W^(1/2) eps`` for Rademacher probes, one column per probe.

    Probe ``j`` draws from its own stream seeded by ``(seed, j)``; signs are
    assigned to rows in canonical order so the estimate ignores row order.
    """
    order = _canonical_row_order(problem)
    n = problem.n_obs
    eps = np.empty((n, probes))
    for k in range(probes):
        rng = np.random.default_rng([seed, start + k])
        signs = rng.integers(0, 2, size=n) * 2.0 - 1.0
        eps[order, k] = signs
    sw = np.sqrt(problem.normalized_weights)
    return np.asarray(problem.standardized_active_X.T @ (eps * sw[:, None]))


def _probe_values(factor: _Factor, V: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->j", V, factor.solve(V))


def hutchinson_samples(problem: DesignProblem, lam: float, probes: int, seed: int, start: int = 0) -> np.ndarray:
    """Per-probe values ``eps' H_W eps`` (each an unbiased estimate of ``tr(H)``)."""
    factor = _Factor(normal_equations(problem), lam)
    return _probe_values(factor, _probe_matrix(problem, probes, seed, start))


def hutchinson_trace(problem: DesignProblem, lam: float, probes: int = 20, seed: int = 0) -> float:
    if probes < 1:
        raise ValueError("need at least one probe")
    return float(np.mean(hutchinson_samples(problem, lam, probes, seed)))


def _gcv(n: int, rss: float, trace: float) -> float:
    if trace >= n:
        raise ValueError(f"trace estimate {trace:.3f} is not below N={n}")
    return n * rss / (n - trace) ** 2


def gcv_score(problem: DesignProblem, lam: float, trace_estimate: float) -> float:
    """``N * WRSS / (N - tr(H))^2`` with mean-1 weights."""
    ne = normal_equations(problem)
    b = _Factor(ne, lam).solve(ne.rhs)
    return _gcv(problem.n_obs, weighted_rss(problem, b), trace_estimate)


def _hkb_from_fit(sigma2: float, penalized_coef: np.ndarray) -> float:
    denom = float(np.dot(penalized_coef, penalized_coef))
    if denom == 0.0:
        return float("inf")
    return penalized_coef.size * sigma2 / denom


def hkb_lambda(problem: DesignProblem, fallback_lambda: float | None = None) -> float:
    """Hoerl-Kennard-Baldwin ``p * MSE / (b'b)`` over penalized standardized coefficients.

    Uses the OLS fit; if that is singular, the ridge fit at ``fallback_lambda``
    stands in for it.
    """
    try:
        fit = solve_ridge(problem, 0.0)
    except SingularGramError:
        if fallback_lambda is None:
            raise
        fit = solve_ridge(problem, fallback_lambda)
    return _hkb_from_fit(fit.sigma2_hat, fit.penalized_std_coefficients)


def relative_movements(coefs: list[np.ndarray]) -> np.ndarray:
    """``||b[i+1] - b[i]|| / ||b[i]||`` along a path."""
    out = []
    for a, b in zip(coefs[:-1], coefs[1:]):
        na = np.linalg.norm(a)
        diff = np.linalg.norm(b - a)
        out.append(0.0 if diff == 0.0 else (diff / na if na > 0 else np.inf))
    return np.asarray(out)


def first_stable(lambdas, movements, threshold: float) -> float:
    """Smallest lambda whose movement and every later movement are below ``threshold``.

    ``movements[i]`` belongs to ``lambdas[i]``; ``lambdas`` may carry one extra
    trailing value, which is the fallback when nothing qualifies.
    """
    lambdas = list(lambdas)
    movements = np.asarray(movements, dtype=float)
    below = movements < threshold
    for i in range(len(movements)):
        if below[i:].all():
            return float(lambdas[i])
    warnings.warn("coefficient paths never stabilize; using the largest lambda searched",
                  StabilizationWarning, stacklevel=2)
    return float(lambdas[-1])


def stabilization_lambda(grid_fits, threshold: float = 0.02) -> float:
    """Stabilization point of a sorted ``[(lam, coefficients), ...]`` path (>= 3 points)."""
    grid_fits = sorted(grid_fits, key=lambda t: t[0])
    if len(grid_fits) < 3:
        raise ValueError("need at least three grid points")
    lams = [g[0] for g in grid_fits]
    moves = relative_movements([np.asarray(g[1], dtype=float) for g in grid_fits])
    return first_stable(lams, moves, threshold)


def _stabilization_window(path, upper: float):
    """Grid points up to and including the first one at or above ``upper`` (at least three).

    Under pure shrinkage the relative movement between log-spaced grid points
    tends to a constant set by the grid ratio, so on an unbounded grid the
    threshold rule always falls through to the largest lambda.
    """
    k = next((i for i, (lam, _) in enumerate(path) if lam >= upper * (1 - 1e-12)), len(path) - 1)
    return path[:max(k + 1, 3)]


def lambda_grid(problem: DesignProblem, config: SelectionConfig) -> np.ndarray:
    grid = np.logspace(np.log10(config.grid_min), np.log10(config.grid_max), config.grid_points)
    if config.grid_scale == "per_observation":
        grid = grid * problem.n_obs
    elif config.grid_scale != "absolute":
        raise ValueError(f"unknown grid_scale {config.grid_scale!r}")
    return grid


@dataclass
class _Eval:
    lam: float
    gcv: float
    trace: float
    max_vif: float
    std_coef: np.ndarray
    coef: np.ndarray
    refined: bool = False


def _evaluate(problem: DesignProblem, lam: float, V: np.ndarray, pen_active: np.ndarray, refined=False) -> _Eval:
    ne = normal_equations(problem)
    factor = _Factor(ne, lam)
    b = factor.solve(ne.rhs)
    trace = float(np.mean(_probe_values(factor, V)))
    rss = weighted_rss(problem, b)
    _, sandwich = _trace_and_sandwich(factor, ne)
    vifs = np.diag(ne.gram) * sandwich
    max_vif = float(vifs[pen_active].max()) if pen_active.any() else 0.0
    return _Eval(lam, _gcv(problem.n_obs, rss, trace), trace, max_vif, b,
                 _expand(b / ne.scales, problem.active, 0.0), refined)


def select_lambda(problem: DesignProblem, config: SelectionConfig | None = None) -> LambdaReport:
    config = config or SelectionConfig()
    ne = normal_equations(problem)
    pen_active = ne.penalized
    V = _probe_matrix(problem, config.probes, config.seed)
    grid = lambda_grid(problem, config)
    evals = [_evaluate(problem, lam, V, pen_active) for lam in grid]

    i = int(np.argmin([e.gcv for e in evals]))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]
    fine = np.logspace(np.log10(lo), np.log10(hi), config.refine_points + 2)[1:-1]
    fine = [lam for lam in fine if not np.any(np.isclose(lam, grid, rtol=1e-12))]
    refined = [_evaluate(problem, lam, V, pen_active, refined=True) for lam in fine]
    all_evals = sorted(evals + refined, key=lambda e: e.lam)
    gcv_lam = min(all_evals, key=lambda e: e.gcv).lam

    hkb = hkb_lambda(problem, fallback_lambda=float(grid[0]))

    under = [e.lam for e in evals if e.max_vif < config.vif_ceiling]
    if under:
        vif_lam = float(under[0])
    else:
        log.warning("max VIF never drops below %g on the grid; using the largest grid lambda", config.vif_ceiling)
        vif_lam = float(grid[-1])

    pen_full = problem.penalized & problem.active
    path = [(e.lam, e.coef[pen_full]) for e in evals]
    if config.stabilization_window == "signals":
        path = _stabilization_window(path, max(gcv_lam, hkb, vif_lam))
    elif config.stabilization_window != "full":
        raise ValueError(f"unknown stabilization_window {config.stabilization_window!r}")
    stab = stabilization_lambda(path, config.stabilization_threshold)

    chosen = max(gcv_lam, hkb, vif_lam, stab)
    points = tuple(
        GridPoint(e.lam, e.gcv, e.trace, e.max_vif, float(np.linalg.norm(e.std_coef[pen_active])), e.refined,
                  tuple(e.coef.tolist()))
        for e in all_evals
    )
    return LambdaReport(float(gcv_lam), float(hkb), vif_lam, stab, float(chosen), points,
                        config.seed, config.probes, problem.n_obs)
