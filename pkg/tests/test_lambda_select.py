import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ridge_apm.design import DesignProblem, standardize
from ridge_apm.lambda_select import (
    LambdaReport,
    SelectionConfig,
    StabilizationWarning,
    first_stable,
    gcv_score,
    hkb_lambda,
    hutchinson_samples,
    hutchinson_trace,
    relative_movements,
    select_lambda,
    stabilization_lambda,
)
from ridge_apm.solver import hat_trace_exact, solve_ridge

from _support import dense_hat_trace, dense_parts, dense_ridge, random_problem


def _permuted(prob, perm):
    return standardize(DesignProblem.from_arrays(prob.X[perm], prob.w[perm], prob.y[perm], prob.penalized))


class TestHutchinson:
    def test_identity_hat_gives_n_for_every_probe(self):
        prob = standardize(DesignProblem.from_arrays(np.eye(6), np.ones(6), np.arange(6.0), [True] * 6))
        np.testing.assert_allclose(hutchinson_samples(prob, 0.0, 10, seed=3), 6.0, rtol=1e-12)

    def test_hundred_probes_match_exact_trace(self):
        prob = random_problem(np.random.default_rng(21), n=200, p=20)
        exact = hat_trace_exact(prob, 1.0)
        vals = hutchinson_samples(prob, 1.0, 100, seed=5)
        assert hutchinson_trace(prob, 1.0, probes=100, seed=5) == pytest.approx(vals.mean(), rel=1e-12)
        # Var(e'He) = 2 (||H||_F^2 - sum H_ii^2); at N=200, p=20 one probe has a relative SD near 30%
        assert abs(vals.mean() - exact) < 3 * vals.std(ddof=1) / 10

    def test_unbiased_within_three_standard_errors(self):
        prob = random_problem(np.random.default_rng(22), n=200, p=20)
        vals = hutchinson_samples(prob, 2.0, 1000, seed=9)
        se = vals.std(ddof=1) / np.sqrt(vals.size)
        assert abs(vals.mean() - hat_trace_exact(prob, 2.0)) < 3 * se

    def test_reproducible(self):
        prob = random_problem(np.random.default_rng(23), n=60, p=6)
        a = hutchinson_trace(prob, 0.5, probes=1, seed=11)
        b = hutchinson_trace(prob, 0.5, probes=1, seed=11)
        assert a == b

    def test_row_order_does_not_matter(self):
        rng = np.random.default_rng(24)
        prob = random_problem(rng, n=80, p=6)
        other = _permuted(prob, rng.permutation(80))
        assert hutchinson_trace(other, 1.0, 7, seed=2) == pytest.approx(hutchinson_trace(prob, 1.0, 7, seed=2),
                                                                        rel=1e-12)

    def test_rejects_zero_probes(self):
        prob = random_problem(np.random.default_rng(25), n=30, p=3)
        with pytest.raises(ValueError):
            hutchinson_trace(prob, 1.0, probes=0)

    def test_estimate_decreases_on_fixed_seed(self):
        prob = random_problem(np.random.default_rng(26), n=120, p=10)
        est = [hutchinson_trace(prob, lam, 20, seed=1) for lam in np.logspace(-2, 4, 12)]
        assert all(b <= a for a, b in zip(est, est[1:]))


class TestGcv:
    def test_matches_dense_oracle_with_exact_trace(self):
        prob = random_problem(np.random.default_rng(31), n=100, p=5)
        lam = 3.0
        Xs, w, s, pen = dense_parts(prob)
        b = dense_ridge(prob, lam)
        rss = float((w * (prob.y - prob.X.toarray() @ b) ** 2).sum())
        tr = dense_hat_trace(prob, lam)
        oracle = 100 * rss / (100 - tr) ** 2
        assert gcv_score(prob, lam, tr) == pytest.approx(oracle, rel=1e-10)
        est = hutchinson_trace(prob, lam, 200, seed=0)
        # tolerance follows from the trace error: d log GCV / d tr = 2 / (N - tr)
        assert gcv_score(prob, lam, est) == pytest.approx(oracle, rel=4 * abs(est - tr) / (100 - tr) + 1e-12)

    def test_perfect_fit_scores_zero(self):
        X = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
        prob = standardize(DesignProblem.from_arrays(X, np.ones(4), X @ [2.0, 3.0], [False, True]))
        assert gcv_score(prob, 0.0, 2.0) == pytest.approx(0.0, abs=1e-20)

    def test_total_shrinkage_limit(self):
        prob = random_problem(np.random.default_rng(32), n=50, p=4)
        w = prob.w / prob.w.mean()
        mu = np.average(prob.y, weights=w)
        wrss0 = float((w * (prob.y - mu) ** 2).sum())
        assert gcv_score(prob, 1e14, 1.0) == pytest.approx(50 * wrss0 / 49 ** 2, rel=1e-8)

    def test_trace_at_least_n_rejected(self):
        prob = random_problem(np.random.default_rng(33), n=20, p=3)
        with pytest.raises(ValueError):
            gcv_score(prob, 1.0, 20.0)


class TestHkb:
    def test_hand_formula(self):
        prob = random_problem(np.random.default_rng(41), n=100, p=5)
        fit = solve_ridge(prob, 0.0)
        w = prob.w / prob.w.mean()
        r = prob.y - prob.X.toarray() @ fit.coefficients
        mse = float((w * r * r).sum()) / (100 - 5)
        b = (fit.coefficients * prob.scales)[1:]
        assert hkb_lambda(prob) == pytest.approx(4 * mse / float(b @ b), rel=1e-10)

    def test_noiseless_is_zero(self):
        rng = np.random.default_rng(42)
        prob = random_problem(rng, n=40, p=4)
        exact = standardize(DesignProblem.from_arrays(prob.X, prob.w, prob.X @ rng.normal(size=4), prob.penalized))
        assert hkb_lambda(exact) == pytest.approx(0.0, abs=1e-20)

    def test_ratio_one(self):
        # with the coefficient norm scaled to p * MSE the estimate is exactly one
        prob = random_problem(np.random.default_rng(43), n=80, p=4)
        fit = solve_ridge(prob, 0.0)
        b = fit.penalized_std_coefficients
        c = np.sqrt(3 * fit.sigma2_hat / float(b @ b))
        # scaling the non-intercept signal rescales b without touching the residuals
        fitted = prob.X.toarray() @ fit.coefficients
        base = fit.coefficients[0]
        y = base + c * (fitted - base) + (prob.y - fitted)
        scaled = standardize(DesignProblem.from_arrays(prob.X, prob.w, y, prob.penalized))
        assert hkb_lambda(scaled) == pytest.approx(1.0, rel=1e-9)

    def test_zero_coefficients_infinite(self):
        X = np.array([[1.0, 1.0], [1.0, 0.0], [1.0, 1.0], [1.0, 0.0]])
        prob = standardize(DesignProblem.from_arrays(X, np.ones(4), [1.0, 2.0, 2.0, 1.0], [False, True]))
        assert hkb_lambda(prob) == np.inf

    def test_singular_uses_surrogate(self):
        X = np.array([[1, 1, 1], [1, 1, 1], [1, 0, 0], [1, 0, 0], [1, 1, 1]], dtype=float)
        prob = standardize(DesignProblem.from_arrays(X, np.ones(5), [3.0, 2.5, 1.0, 1.2, 2.9], [False, True, True]))
        fit = solve_ridge(prob, 0.01)
        expected = 2 * fit.sigma2_hat / float(fit.penalized_std_coefficients @ fit.penalized_std_coefficients)
        assert hkb_lambda(prob, fallback_lambda=0.01) == pytest.approx(expected, rel=1e-12)


class TestStabilization:
    def test_worked_sequence(self):
        assert first_stable([0.01, 0.1, 0.5, 1.0], [0.5, 0.1, 0.01, 0.005], 0.02) == 0.5

    def test_constant_path_is_smallest(self):
        path = [(lam, np.array([1.0, -2.0, 0.5])) for lam in (0.3, 0.1, 1.0, 5.0)]
        assert stabilization_lambda(path) == 0.1

    def test_oscillating_warns_and_returns_largest(self):
        path = [(lam, np.array([(-1.0) ** i, 1.0])) for i, lam in enumerate([0.01, 0.1, 1.0, 10.0])]
        with pytest.warns(StabilizationWarning):
            assert stabilization_lambda(path) == 10.0

    def test_late_spike_resets(self):
        assert first_stable([1, 2, 3, 4, 5], [0.5, 0.01, 0.3, 0.01, 0.001], 0.02) == 4

    def test_needs_three_points(self):
        with pytest.raises(ValueError):
            stabilization_lambda([(0.1, [1.0]), (1.0, [1.0])])

    def test_relative_movements(self):
        m = relative_movements([np.array([3.0, 4.0]), np.array([3.0, 4.0]), np.array([0.0, 4.0]), np.zeros(2)])
        np.testing.assert_allclose(m, [0.0, 3.0 / 5.0, 1.0])


def _orthogonal_problem(rng, n=2400, p=5, noise=0.1):
    X = np.zeros((n, p + 1))
    X[:, 0] = 1
    # every sixth row has nobody on; each remaining row holds exactly one player
    who = np.arange(n) % (p + 1)
    X[who > 0, who[who > 0]] = 1
    beta = np.array([0.0, 1.0, -1.0, 2.0, 0.5, -1.5])
    y = X @ beta + rng.normal(scale=noise, size=n)
    return standardize(DesignProblem.from_arrays(X, np.ones(n), y, [False] + [True] * p))


class TestSelect:
    def test_chosen_is_max_of_signals(self):
        prob = random_problem(np.random.default_rng(51), n=150, p=10)
        r = select_lambda(prob)
        assert r.chosen == max(r.gcv_lambda, r.hkb_lambda, r.vif_lambda, r.stabilization_lambda)
        assert min(r.gcv_lambda, r.hkb_lambda, r.vif_lambda, r.stabilization_lambda) >= 0

    def test_well_conditioned_needs_little_shrinkage(self):
        r = select_lambda(_orthogonal_problem(np.random.default_rng(52)))
        for v in (r.gcv_lambda, r.hkb_lambda, r.vif_lambda, r.stabilization_lambda, r.chosen):
            assert v / r.n_obs <= 1e-3

    def test_duplicate_pair_forces_positive(self):
        rng = np.random.default_rng(53)
        X = (rng.random((200, 6)) < 0.4).astype(float)
        X[:, 0] = 1
        X[:, 5] = X[:, 4]
        X[0, 4] = X[0, 5] = 1
        prob = standardize(DesignProblem.from_arrays(X, rng.uniform(1, 60, 200), rng.normal(size=200),
                                                     [False] + [True] * 5))
        r = select_lambda(prob)
        assert r.vif_lambda > 0 and r.chosen > 0
        assert np.isfinite(r.hkb_lambda)

    def test_grid_minimizer_beats_neighbours(self):
        r = select_lambda(random_problem(np.random.default_rng(54), n=150, p=12))
        coarse = [g for g in r.grid if not g.refined]
        i = int(np.argmin([g.gcv for g in coarse]))
        for j in (i - 1, i + 1):
            if 0 <= j < len(coarse):
                assert coarse[i].gcv <= coarse[j].gcv
        assert min(g.gcv for g in r.grid) == pytest.approx(
            next(g.gcv for g in r.grid if g.lam == r.gcv_lambda))

    def test_grid_traces_monotone(self):
        r = select_lambda(random_problem(np.random.default_rng(55), n=150, p=12))
        norms = [g.coef_norm for g in r.grid]
        traces = [g.trace_estimate for g in r.grid]
        assert all(b <= a * (1 + 1e-12) for a, b in zip(norms, norms[1:]))
        assert all(b <= a * (1 + 1e-12) for a, b in zip(traces, traces[1:]))

    def test_default_grid_is_per_observation(self):
        prob = random_problem(np.random.default_rng(56), n=90, p=5)
        r = select_lambda(prob)
        coarse = [g.lam for g in r.grid if not g.refined]
        assert len(coarse) == 25
        assert coarse[0] == pytest.approx(1e-4 * 90) and coarse[-1] == pytest.approx(1e2 * 90)
        absolute = select_lambda(prob, SelectionConfig(grid_scale="absolute"))
        assert [g.lam for g in absolute.grid if not g.refined][-1] == pytest.approx(100.0)

    def test_full_window_option(self):
        prob = random_problem(np.random.default_rng(57), n=90, p=5)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StabilizationWarning)
            full = select_lambda(prob, SelectionConfig(stabilization_window="full"))
            windowed = select_lambda(prob)
        assert full.stabilization_lambda >= windowed.stabilization_lambda
        with pytest.raises(ValueError):
            select_lambda(prob, SelectionConfig(stabilization_window="bogus"))

    def test_json_round_trip(self):
        r = select_lambda(random_problem(np.random.default_rng(58), n=80, p=5))
        d = json.loads(r.to_json())
        assert d["chosen"] == r.chosen
        assert d["reference_per_observation"] == 0.5
        assert len(d["grid"]) == len(r.grid)

    def test_fixed_report(self):
        r = LambdaReport.fixed(12.0, n_obs=24)
        assert r.policy == "FIXED" and r.chosen_per_observation == 0.5
        assert np.isnan(r.gcv_lambda)


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_chosen_invariant_to_row_permutation(seed):
    rng = np.random.default_rng(seed)
    prob = random_problem(rng, n=70, p=6)
    other = _permuted(prob, rng.permutation(70))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StabilizationWarning)
        a, b = select_lambda(prob), select_lambda(other)
    assert a.chosen == pytest.approx(b.chosen, rel=1e-9)
    assert a.gcv_lambda == pytest.approx(b.gcv_lambda, rel=1e-9)
