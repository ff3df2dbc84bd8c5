"""Two-group permutation engine: statistics, plans, exact and MC tails."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wedgeperm import (
    PermutationResult,
    TwoGroupSample,
    diff_in_means,
    permutation_pvalue,
    rank_sum,
    relabel_plan,
)
from wedgeperm.rng import generator

finite_floats = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
small_groups = st.tuples(
    st.lists(finite_floats, min_size=1, max_size=5),
    st.lists(finite_floats, min_size=1, max_size=5),
)


class TestTwoGroupSample:
    def test_pooled_is_treated_first(self):
        s = TwoGroupSample([1.0, 2.0], [3.0], 3)
        assert s.pooled().tolist() == [1.0, 2.0, 3.0]

    def test_rejects_empty_group(self):
        with pytest.raises(ValueError, match="non-empty"):
            TwoGroupSample([], [1.0], 1)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="non-finite"):
            TwoGroupSample([1.0, math.nan], [0.0], 3)

    def test_rejects_bad_scale(self):
        with pytest.raises(ValueError, match="scale_n"):
            TwoGroupSample([1.0], [0.0], 0)


class TestStatistics:
    def test_equal_means_give_zero(self):
        assert diff_in_means(TwoGroupSample([1.0, 1.0], [1.0, 1.0], 4)) == 0.0

    def test_scaled_gap(self):
        assert diff_in_means(TwoGroupSample([2.0], [0.0], 4)) == 4.0

    def test_antisymmetry(self):
        a = TwoGroupSample([3.0, 1.0], [0.0, 2.0], 4)
        b = TwoGroupSample([0.0, 2.0], [3.0, 1.0], 4)
        assert diff_in_means(a) == -diff_in_means(b)

    def test_rank_sum_simple(self):
        assert rank_sum(TwoGroupSample([3.0], [1.0, 2.0], 3)) == 3.0

    def test_rank_sum_midranks_on_ties(self):
        # pooled (1, 1, 1): every rank is 2
        assert rank_sum(TwoGroupSample([1.0, 1.0], [1.0], 3)) == 4.0

    def test_unknown_statistic_rejected(self):
        s = TwoGroupSample([1.0], [0.0], 2)
        with pytest.raises(ValueError, match="unknown statistic"):
            permutation_pvalue(s, statistic="median_gap")


class TestRelabelPlan:
    def test_exact_plan_enumerates_all_subsets(self):
        plan = relabel_plan(4, 2, exact_threshold=10)
        assert plan.exact and plan.n_resamples == 6
        rows = {tuple(sorted(r)) for r in plan.selections.tolist()}
        assert rows == {tuple(c) for c in itertools.combinations(range(4), 2)}

    def test_exact_hits_follow_hypergeometric_counts(self):
        m, n = 3, 4
        plan = relabel_plan(m + n, m, exact_threshold=100)
        hits = plan.treated_hits()
        for k in range(m + 1):
            assert int((hits == k).sum()) == math.comb(m, k) * math.comb(n, m - k)

    def test_sums_are_linear_in_a_constant_shift(self):
        plan = relabel_plan(10, 4, budget=200, exact_threshold=1, seed=3)
        values = np.arange(10, dtype=float)
        shifted = plan.sums(values + 2.5)
        assert np.allclose(shifted, plan.sums(values) + 4 * 2.5)

    def test_monte_carlo_plan_is_deterministic(self):
        a = relabel_plan(30, 10, budget=777, exact_threshold=1, seed=9)
        b = relabel_plan(30, 10, budget=777, exact_threshold=1, seed=9)
        assert np.array_equal(a.selections, b.selections)
        assert not a.exact and a.n_resamples == 777

    def test_budget_spanning_multiple_blocks(self):
        plan = relabel_plan(12, 3, budget=1500, exact_threshold=1, seed=0)
        assert plan.n_resamples == 1500
        assert ((plan.selections >= 0) & (plan.selections < 12)).all()
        # every row is a 3-subset: distinct slots
        assert all(len(set(row)) == 3 for row in plan.selections.tolist())

    def test_rejects_degenerate_split(self):
        with pytest.raises(ValueError, match="at least one treated"):
            relabel_plan(4, 0)
        with pytest.raises(ValueError, match="at least one treated"):
            relabel_plan(4, 4)

    def test_rejects_zero_budget(self):
        with pytest.raises(ValueError, match="budget"):
            relabel_plan(50, 10, budget=0, exact_threshold=1)


class TestExactPValues:
    def test_two_relabelings_observed_max(self):
        r = permutation_pvalue(TwoGroupSample([5.0], [0.0], 2))
        assert r.exact and r.n_resamples == 2
        assert r.p_greater == 0.5 and r.p_less == 1.0

    def test_all_identical_outcomes_tie_everywhere(self):
        r = permutation_pvalue(TwoGroupSample([2.0, 2.0], [2.0, 2.0], 4))
        assert r.p_less == 1.0 and r.p_greater == 1.0

    def test_granularity_exact(self):
        r = permutation_pvalue(TwoGroupSample([1.0, 2.0], [0.0, 3.0], 4))
        assert r.granularity == 1.0 / math.comb(4, 2)

    def test_matches_brute_force_enumeration(self):
        treated = np.asarray([0.3, -1.2, 2.0])
        control = np.asarray([0.1, 0.5, -0.7, 1.1])
        sample = TwoGroupSample(treated, control, 7)
        r = permutation_pvalue(sample)
        pool = sample.pooled()
        obs = diff_in_means(sample)
        stats = []
        for sel in itertools.combinations(range(7), 3):
            rest = [i for i in range(7) if i not in sel]
            stats.append(diff_in_means(TwoGroupSample(pool[list(sel)], pool[rest], 7)))
        stats = np.asarray(stats)
        assert r.p_less == pytest.approx(float((stats <= obs + 1e-12).mean()))
        assert r.p_greater == pytest.approx(float((stats >= obs - 1e-12).mean()))

    def test_rank_sum_matches_brute_force(self):
        treated = np.asarray([0.4, 0.4, 1.9])
        control = np.asarray([-0.3, 0.4, 2.2])
        sample = TwoGroupSample(treated, control, 6)
        r = permutation_pvalue(sample, statistic="rank_sum")
        pool = sample.pooled()
        obs = rank_sum(sample)
        stats = []
        for sel in itertools.combinations(range(6), 3):
            rest = [i for i in range(6) if i not in sel]
            stats.append(rank_sum(TwoGroupSample(pool[list(sel)], pool[rest], 6)))
        stats = np.asarray(stats)
        assert r.statistic == obs
        assert r.p_less == pytest.approx(float((stats <= obs).mean()))
        assert r.p_greater == pytest.approx(float((stats >= obs).mean()))


class TestMonteCarloPValues:
    def test_add_one_correction_and_granularity(self):
        s = TwoGroupSample(np.arange(6, dtype=float), np.arange(6, 14, dtype=float), 14)
        r = permutation_pvalue(s, budget=99, exact_threshold=1, seed=0)
        assert not r.exact and r.n_resamples == 99
        assert r.granularity == 1.0 / 100
        assert r.p_less >= 1.0 / 100 and r.p_greater >= 1.0 / 100

    def test_agrees_with_exact_within_mc_error(self):
        gen = generator(31)
        s = TwoGroupSample(gen.normal(0.4, 1, 4), gen.normal(0, 1, 8), 12)
        exact = permutation_pvalue(s)
        assert exact.exact and exact.n_resamples == math.comb(12, 4)
        mc = permutation_pvalue(s, budget=100_000, exact_threshold=1, seed=5)
        for tail in ("p_less", "p_greater"):
            p = getattr(exact, tail)
            se = math.sqrt(p * (1 - p) / 100_000)
            assert abs(getattr(mc, tail) - p) <= 3 * se + 2 / 100_000

    def test_same_seed_reproduces(self):
        s = TwoGroupSample(np.arange(5, dtype=float), np.arange(10, dtype=float), 15)
        a = permutation_pvalue(s, budget=500, exact_threshold=1, seed=4)
        b = permutation_pvalue(s, budget=500, exact_threshold=1, seed=4)
        assert (a.p_less, a.p_greater) == (b.p_less, b.p_greater)

    def test_location_invariance_exact_equality(self):
        gen = generator(8)
        t, c = gen.normal(0, 1, 6), gen.normal(0, 1, 9)
        a = permutation_pvalue(TwoGroupSample(t, c, 15), budget=400, exact_threshold=1, seed=2)
        b = permutation_pvalue(TwoGroupSample(t + 17.5, c + 17.5, 15), budget=400, exact_threshold=1, seed=2)
        assert (a.p_less, a.p_greater) == (b.p_less, b.p_greater)

    def test_shared_plan_overrides_budget(self):
        s = TwoGroupSample(np.arange(4, dtype=float), np.arange(8, dtype=float), 12)
        plan = relabel_plan(12, 4, budget=250, exact_threshold=1, seed=1)
        r = permutation_pvalue(s, budget=999, plan=plan)
        assert r.n_resamples == 250


class TestNullValidity:
    def test_null_rejection_rates_bounded(self):
        # exact tests on iid data: P{p <= alpha} <= alpha, checked by MC
        gen = generator(99)
        n_reps = 2000
        pvals = np.empty(n_reps)
        for i in range(n_reps):
            y = gen.normal(0, 1, 10)
            pvals[i] = permutation_pvalue(TwoGroupSample(y[:5], y[5:], 10)).p_greater
        for alpha in (0.01, 0.05, 0.1):
            rate = float((pvals <= alpha).mean())
            se = math.sqrt(alpha * (1 - alpha) / n_reps)
            assert rate <= alpha + 3 * se


class TestPermutedVariance:
    def test_variance_formula_on_standardized_arms(self):
        # arms standardized to sample variances exactly 1 and 4
        m = n = 50
        N = m + n
        gen = generator(12)
        t = gen.normal(0, 1, m)
        c = gen.normal(0, 1, n)
        t = (t - t.mean()) / t.std(ddof=1)
        c = 2.0 * (c - c.mean()) / c.std(ddof=1)
        sample = TwoGroupSample(t, c, N)
        plan = relabel_plan(N, m, budget=40_000, exact_threshold=1, seed=6)
        sums = plan.sums(sample.pooled())
        # sum -> statistic: T = sqrt(N) * (s/m - (total - s)/n)
        total = sample.pooled().sum()
        stats = math.sqrt(N) * (sums / m - (total - sums) / n)
        expected = (N / n) * 1.0 + (N / m) * 4.0
        assert abs(float(stats.var()) / expected - 1.0) < 0.05


class TestResultInvariants:
    def test_tails_must_overlap(self):
        with pytest.raises(ValueError, match="overlap"):
            PermutationResult(0.0, 0.4, 0.4, 100, False)

    def test_pvalues_must_be_positive(self):
        with pytest.raises(ValueError, match=r"\(0, 1\]"):
            PermutationResult(0.0, 0.0, 1.0, 100, False)

    @given(small_groups)
    @settings(max_examples=60, deadline=None)
    def test_tail_overlap_property(self, groups):
        treated, control = groups
        r = permutation_pvalue(TwoGroupSample(treated, control, len(treated) + len(control)))
        assert r.p_less + r.p_greater >= 1.0
        assert 0.0 < r.p_less <= 1.0 and 0.0 < r.p_greater <= 1.0
