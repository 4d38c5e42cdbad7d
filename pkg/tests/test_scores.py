import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from frenetcp.errors import AlphaTooSmallForN, HorizonMismatch
from frenetcp.records import MultimodalForecast, ScenarioClass, ScenarioRecord
from frenetcp.geometry import ReferenceRoute
from frenetcp.scores import (
    LAT,
    LON,
    corrected_rank,
    quantile,
    quantile_vector,
    score,
    score_matrix,
)

ROUTE = ReferenceRoute.from_points([(0.0, 0.0), (1000.0, 0.0)])


def record_from_arrays(modes, truth, dt=0.5):
    return ScenarioRecord(
        id="r",
        scenario=ScenarioClass.NORMAL_DRIVING,
        route=ROUTE,
        forecast=MultimodalForecast(np.asarray(modes, dtype=float), dt),
        truth=np.asarray(truth, dtype=float),
    )


def exhaustive_score_oracle(modes, truth):
    """Plain loops over steps, directions, and modes."""
    k_modes, horizon, _ = modes.shape
    out = np.zeros((horizon, 2))
    for t in range(horizon):
        for direction in (LON, LAT):
            best = math.inf
            for k in range(k_modes):
                best = min(best, abs(modes[k, t, direction] - truth[t, direction]))
            out[t, direction] = best
    return out


def sort_quantile_oracle(values, alpha):
    ordered = sorted(values)
    k = math.ceil((1 - alpha) * (len(values) + 1))
    assert k <= len(values)
    return ordered[k - 1]


class TestScore:
    def test_exact_forecast_zero_scores(self):
        truth = np.stack([np.arange(1.0, 5.0) * 10, np.zeros(4)], axis=1)
        rec = record_from_arrays(truth[None], truth)
        np.testing.assert_array_equal(score(rec), 0.0)

    def test_per_direction_independence(self):
        truth = np.array([[10.0, 0.0]])
        modes = np.array([[[12.0, 0.1]], [[10.5, 3.0]]])  # s errs {2, .5}, d errs {.1, 3}
        rec = record_from_arrays(modes, truth)
        np.testing.assert_allclose(score(rec)[0], [0.5, 0.1])

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(42)
        for trial in range(30):
            truth = np.stack([np.linspace(10, 40, 6), rng.normal(0, 1, 6)], axis=1)
            modes = truth[None] + rng.normal(0, 2, size=(4, 6, 2))
            modes[..., 0] = np.abs(modes[..., 0])
            rec = record_from_arrays(modes, truth)
            np.testing.assert_array_equal(score(rec), exhaustive_score_oracle(modes, truth))

    @given(st.permutations(list(range(5))))
    @settings(max_examples=30, deadline=None)
    def test_permutation_invariant_over_modes(self, perm):
        rng = np.random.default_rng(1)
        truth = np.stack([np.linspace(5, 20, 3), np.zeros(3)], axis=1)
        modes = truth[None] + rng.normal(0, 1, size=(5, 3, 2))
        rec = record_from_arrays(modes, truth)
        rec_perm = record_from_arrays(modes[list(perm)], truth)
        np.testing.assert_array_equal(score(rec), score(rec_perm))


class TestScoreMatrix:
    def test_stacks_records(self):
        truth = np.array([[10.0, 0.0], [12.0, 0.0]])
        recs = [record_from_arrays(truth[None] + off, truth) for off in (0.5, 1.5)]
        mat = score_matrix(recs)
        assert mat.shape == (2, 2, 2)
        np.testing.assert_allclose(mat[0], 0.5)
        np.testing.assert_allclose(mat[1], 1.5)

    def test_horizon_mismatch(self):
        a = record_from_arrays(np.full((1, 3, 2), 5.0), np.full((3, 2), 5.0))
        b = record_from_arrays(np.full((1, 4, 2), 5.0), np.full((4, 2), 5.0))
        with pytest.raises(HorizonMismatch):
            score_matrix([a, b])


class TestQuantile:
    def test_one_to_ten(self):
        values = list(range(1, 11))
        assert quantile(values, 0.2) == 9.0
        assert quantile(values, 0.2) == sort_quantile_oracle(values, 0.2)

    def test_alpha_too_small(self):
        with pytest.raises(AlphaTooSmallForN):
            quantile([5.0], 0.4)

    def test_constant_scores(self):
        assert quantile([3.0] * 7, 0.3) == 3.0

    def test_matches_sort_oracle_randomized(self):
        rng = np.random.default_rng(11)
        for trial in range(120):
            n = int(rng.integers(3, 60))
            alpha = float(rng.uniform(0.05, 0.5))
            if math.ceil((1 - alpha) * (n + 1)) > n:
                continue
            values = rng.exponential(2.0, size=n)
            assert quantile(values, alpha) == sort_quantile_oracle(values, alpha)

    def test_rank_formula_boundaries(self):
        assert corrected_rank(0.2, 10) == 9
        assert corrected_rank(0.1, 9) == 9
        assert corrected_rank(0.3, 9) == 7  # (1-0.3)*10 is exactly 7 in reals
        with pytest.raises(AlphaTooSmallForN):
            corrected_rank(0.05, 10)
        with pytest.raises(ValueError):
            corrected_rank(1.2, 10)


class TestQuantileVector:
    def test_identical_records(self):
        truth = np.stack([np.arange(4.0) + 10, np.zeros(4)], axis=1)
        recs = [record_from_arrays(truth[None] + 0.7, truth) for _ in range(10)]
        qv = quantile_vector(score_matrix(recs), 0.2)
        np.testing.assert_allclose(qv.q_s, 0.7)
        np.testing.assert_allclose(qv.q_d, 0.7)

    def test_columnwise_equals_scalar_quantile(self):
        rng = np.random.default_rng(3)
        mat = rng.gamma(2.0, 1.0, size=(40, 5, 2))
        qv = quantile_vector(mat, 0.25)
        for t in range(5):
            assert qv.q_s[t] == quantile(mat[:, t, LON], 0.25)
            assert qv.q_d[t] == quantile(mat[:, t, LAT], 0.25)

    def test_matches_sort_oracle_randomized(self):
        rng = np.random.default_rng(8)
        mat = rng.exponential(1.0, size=(50, 8, 2))
        qv = quantile_vector(mat, 0.1)
        for t in range(8):
            assert qv.q_s[t] == sort_quantile_oracle(mat[:, t, LON], 0.1)
            assert qv.q_d[t] == sort_quantile_oracle(mat[:, t, LAT], 0.1)

    @given(
        alphas=st.tuples(
            st.floats(min_value=0.05, max_value=0.45),
            st.floats(min_value=0.05, max_value=0.45),
        )
    )
    @settings(max_examples=40, deadline=None)
    def test_monotone_in_alpha(self, alphas):
        a1, a2 = min(alphas), max(alphas)
        mat = np.random.default_rng(0).exponential(1.0, size=(30, 4, 2))
        qv1 = quantile_vector(mat, a1)
        qv2 = quantile_vector(mat, a2)
        assert np.all(qv1.q_s >= qv2.q_s)
        assert np.all(qv1.q_d >= qv2.q_d)

    def test_propagates_infeasibility(self):
        with pytest.raises(AlphaTooSmallForN):
            quantile_vector(np.ones((3, 2, 2)), 0.1)


class TestMarginalCoverageStatistical:
    def test_per_timestep_coverage_near_nominal(self):
        # i.i.d. scores; held-out fraction below the corrected quantile
        # should sit at or above 1 - alpha, within sampling tolerance
        rng = np.random.default_rng(2024)
        alpha = 0.2
        n = 2000
        calib = rng.exponential(1.0, size=(n, 6, 2))
        fresh = rng.exponential(1.0, size=(n, 6, 2))
        qv = quantile_vector(calib, alpha)
        for t in range(6):
            cover_s = np.mean(fresh[:, t, LON] <= qv.q_s[t])
            cover_d = np.mean(fresh[:, t, LAT] <= qv.q_d[t])
            assert cover_s >= 1 - alpha - 0.03
            assert cover_d >= 1 - alpha - 0.03
            assert cover_s <= 1 - alpha + 0.05
            assert cover_d <= 1 - alpha + 0.05
