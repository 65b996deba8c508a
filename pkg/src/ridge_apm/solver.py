"""Duration-weighted ridge regression on standardized indicator designs.

All solves work with weights normalized to mean 1 and the standardized
columns ``X / s``. With ``G = Xs' W Xs`` and ``P`` the identity with a zero
for every unpenalized column, the ridge estimate solves
``(G + lam P) b = Xs' W y``; coefficients are reported as ``b / s``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .design import ColumnCatalog, DesignProblem

log = logging.getLogger(__name__)

# reciprocal condition below which an unpenalized Gram matrix counts as singular
SINGULAR_RCOND = 1e-12


class SingularGramError(np.linalg.LinAlgError):
    pass


class OverparameterizedError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NormalEquations:
    """Gram matrix and right-hand side over the active columns."""

    gram: np.ndarray
    rhs: np.ndarray
    penalized: np.ndarray
    active: np.ndarray
    scales: np.ndarray
    n_obs: int


def normal_equations(problem: DesignProblem) -> NormalEquations:
    cached = problem.__dict__.get("_normal_equations")
    if cached is not None:
        return cached
    if not problem.is_standardized:
        raise ValueError("standardize the problem before solving")
    Xs = problem.standardized_active_X
    wn = problem.normalized_weights
    WX = Xs.multiply(wn[:, None]).tocsr()
    gram = np.asarray((Xs.T @ WX).todense())
    gram = 0.5 * (gram + gram.T)
    rhs = np.asarray(Xs.T @ (wn * problem.y)).ravel()
    act = problem.active
    ne = NormalEquations(gram, rhs, problem.penalized[act], act, problem.scales[act], problem.n_obs)
    problem.__dict__["_normal_equations"] = ne
    return ne


class _Factor:
    """Factorization of ``A = G + lam P`` with a solve method."""

    def __init__(self, ne: NormalEquations, lam: float):
        if lam < 0 or not np.isfinite(lam):
            raise ValueError(f"lambda must be finite and >= 0, got {lam}")
        self.lam = float(lam)
        A = ne.gram + self.lam * np.diag(ne.penalized.astype(float))
        self.A = A
        self._cho = None
        try:
            c, lower = sla.cho_factor(A, lower=True, check_finite=False)
            rcond, _ = sla.lapack.dpocon(c, np.abs(A).sum(axis=0).max(), uplo="L")
            self.rcond = float(rcond)
            self._cho = (c, lower)
        except np.linalg.LinAlgError:
            self.rcond = 0.0
        if self.rcond < SINGULAR_RCOND and self.lam == 0.0:
            raise SingularGramError(
                "the unpenalized Gram matrix is singular (exactly collinear columns, e.g. teammates who "
                "are always on the ice together): least-squares estimates are not unique; use lambda > 0"
            )
        if self._cho is None:
            log.warning("Cholesky failed at lambda=%g; falling back to a symmetric indefinite solve", lam)

    def solve(self, B: np.ndarray) -> np.ndarray:
        if self._cho is not None:
            return sla.cho_solve(self._cho, B, check_finite=False)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            return sla.solve(self.A, B, assume_a="sym", check_finite=False)

    @cached_property
    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.A.shape[0]))


@dataclass(frozen=True, eq=False)
class RidgeFit:
    lam: float
    coefficients: np.ndarray
    std_errors: np.ndarray
    sigma2_hat: float
    effective_df: float
    weighted_mse: float
    weighted_rss: float
    gram: np.ndarray
    std_coefficients: np.ndarray
    active: np.ndarray
    catalog: ColumnCatalog
    n_obs: int

    @property
    def penalized_std_coefficients(self) -> np.ndarray:
        return self.std_coefficients[self.catalog.penalized & self.active]


def _expand(values: np.ndarray, active: np.ndarray, fill: float) -> np.ndarray:
    out = np.full(active.shape, fill, dtype=float)
    out[active] = values
    return out


def weighted_rss(problem: DesignProblem, std_coef_active: np.ndarray) -> float:
    """Residual sum of squares under the mean-1 weights."""
    r = problem.y - problem.standardized_active_X @ std_coef_active
    return float(np.dot(problem.normalized_weights, r * r))


def _trace_and_sandwich(factor: _Factor, ne: NormalEquations) -> tuple[float, np.ndarray]:
    Ainv = factor.inverse
    AinvG = Ainv @ ne.gram
    trace = float(np.trace(AinvG))
    sandwich_diag = np.einsum("ij,ji->i", AinvG, Ainv)
    return trace, sandwich_diag


def solve_ridge(problem: DesignProblem, lam: float) -> RidgeFit:
    """Ridge fit at ``lam`` (``lam = 0`` is weighted OLS)."""
    ne = normal_equations(problem)
    factor = _Factor(ne, lam)
    b = factor.solve(ne.rhs)
    trace, sandwich = _trace_and_sandwich(factor, ne)
    rss = weighted_rss(problem, b)
    n = problem.n_obs
    dof = n - trace
    sigma2 = rss / dof if dof > 0 else float("nan")
    with np.errstate(invalid="ignore"):
        se = np.sqrt(sigma2 * np.clip(sandwich, 0.0, None)) / ne.scales
    active = problem.active
    return RidgeFit(
        lam=float(lam),
        coefficients=_expand(b / ne.scales, active, 0.0),
        std_errors=_expand(se, active, np.inf),
        sigma2_hat=float(sigma2),
        effective_df=trace,
        weighted_mse=rss / n,
        weighted_rss=rss,
        gram=ne.gram,
        std_coefficients=_expand(b, active, 0.0),
        active=active,
        catalog=problem.catalog,
        n_obs=n,
    )


def standard_errors(fit: RidgeFit, problem: DesignProblem) -> np.ndarray:
    """Sandwich standard errors ``sqrt(sigma2 diag(A^-1 G A^-1)) / s`` in per-60 units."""
    ne = normal_equations(problem)
    factor = _Factor(ne, fit.lam)
    trace, sandwich = _trace_and_sandwich(factor, ne)
    n = problem.n_obs
    if n <= trace:
        raise OverparameterizedError(f"N={n} does not exceed the effective degrees of freedom {trace:.3f}")
    rss = weighted_rss(problem, fit.std_coefficients[problem.active])
    se = np.sqrt(rss / (n - trace) * np.clip(sandwich, 0.0, None)) / ne.scales
    return _expand(se, problem.active, np.inf)


def solve_min_norm_ols(problem: DesignProblem, rcond: float = 1e-10) -> RidgeFit:
    """Minimum-norm least squares (pseudo-inverse), for rank-deficient OLS baselines."""
    ne = normal_equations(problem)
    vals, vecs = np.linalg.eigh(ne.gram)
    keep = vals > rcond * vals.max()
    inv_vals = np.zeros_like(vals)
    inv_vals[keep] = 1.0 / vals[keep]
    pinv = (vecs * inv_vals) @ vecs.T
    b = pinv @ ne.rhs
    rank = int(keep.sum())
    rss = weighted_rss(problem, b)
    n = problem.n_obs
    sigma2 = rss / (n - rank) if n > rank else float("nan")
    se = np.sqrt(sigma2 * np.clip(np.diag(pinv), 0.0, None)) / ne.scales
    active = problem.active
    return RidgeFit(0.0, _expand(b / ne.scales, active, 0.0), _expand(se, active, np.inf), float(sigma2),
                    float(rank), rss / n, rss, ne.gram, _expand(b, active, 0.0), active, problem.catalog, n)


def vif(problem: DesignProblem, lam: float) -> np.ndarray:
    """Ridge variance inflation factors, ``G_kk [A^-1 G A^-1]_kk``.

    Equals the diagonal of Marquardt's expression on the correlation-scaled
    Gram matrix. Degenerate columns get NaN; a singular system at
    ``lam = 0`` gives +inf everywhere.
    """
    ne = normal_equations(problem)
    try:
        factor = _Factor(ne, lam)
    except SingularGramError:
        return _expand(np.full(ne.gram.shape[0], np.inf), problem.active, np.nan)
    _, sandwich = _trace_and_sandwich(factor, ne)
    return _expand(np.diag(ne.gram) * sandwich, problem.active, np.nan)


def hat_trace_exact(problem: DesignProblem, lam: float) -> float:
    """``tr(H) = tr((G + lam P)^-1 G)``; never forms the N x N hat matrix."""
    ne = normal_equations(problem)
    factor = _Factor(ne, lam)
    return float(np.trace(factor.solve(ne.gram)))
