"""Simulation studies: outcome models, power and coverage tables."""

import math

import numpy as np
import pytest

from wedgeperm import (
    CoverageRow,
    DataFormatError,
    PowerRow,
    Sim1Config,
    Sim2Config,
    StudyResult,
    TestConfig,
    combined_from_mcrt,
    coverage_study,
    default_counts,
    emit_tables,
    gen_outcomes_sim1,
    gen_outcomes_sim2,
    interaction_f,
    parse_tables,
    power_study,
    run_mcrts,
)
from wedgeperm.rng import generator, seed_sequence
from wedgeperm.sim import _POWER_TAG, _power_replicate


class TestDefaultCounts:
    def test_even_split_absorbs_remainder_at_the_end(self):
        assert default_counts(100, 6) == (16, 16, 16, 16, 16, 20)
        assert default_counts(6, 6) == (1, 1, 1, 1, 1, 1)
        assert sum(default_counts(17, 4)) == 17

    def test_too_few_periods(self):
        with pytest.raises(ValueError, match="two periods"):
            default_counts(10, 1)

    def test_too_few_units(self):
        with pytest.raises(ValueError, match="one unit per period"):
            default_counts(3, 4)


class TestConfigs:
    def test_lag_bounds(self):
        with pytest.raises(ValueError, match=r"lag must lie in \[0, 4\]"):
            Sim1Config(n_units=12, n_times=6, lag=5)

    def test_negative_variance_rejected(self):
        with pytest.raises(ValueError, match="var_noise"):
            Sim1Config(var_noise=-0.1)

    def test_zero_variances_allowed(self):
        cfg = Sim1Config(var_unit=0.0, var_covariate=0.0, var_noise=0.0)
        assert cfg.var_unit == 0.0

    def test_replicates_positive(self):
        with pytest.raises(ValueError, match="replicates"):
            Sim1Config(replicates=0)

    def test_effect_vector_length_must_match_periods(self):
        with pytest.raises(ValueError, match="one effect per lag"):
            Sim2Config(n_times=4, taus=(0.1, 0.2))

    def test_interaction_index_checked(self):
        with pytest.raises(ValueError, match="interaction"):
            Sim2Config(interaction=7, taus=(0.0,) * 8)

    def test_level_bounds(self):
        with pytest.raises(ValueError, match="level"):
            Sim2Config(level=1.0)


class TestInteractionF:
    def test_zero_index_vanishes(self):
        assert np.array_equal(interaction_f(0, [-3.0, 0.0, 2.5]), np.zeros(3))

    def test_quadratic(self):
        assert interaction_f(1, 2.0) == 4.0
        assert np.array_equal(interaction_f(1, [-1.0, 3.0]), [1.0, 9.0])

    def test_exponential(self):
        assert interaction_f(2, 0.0) == 2.0
        assert interaction_f(2, 2.0) == pytest.approx(2.0 * math.e)

    def test_saturating(self):
        assert interaction_f(3, 0.0) == 0.0
        assert interaction_f(3, 50.0) == pytest.approx(5.0)
        assert interaction_f(3, -50.0) == pytest.approx(-5.0)

    def test_unknown_index(self):
        with pytest.raises(ValueError, match="interaction index"):
            interaction_f(4, 1.0)


class TestOutcomeModels:
    def test_deterministic_panel_is_exact(self):
        # all variances zero: outcome is 0.5*t plus the effect exactly
        # one step after each unit's crossover
        cfg = Sim1Config(
            n_units=12, n_times=3, lag=1, effect=1.0,
            var_unit=0.0, var_covariate=0.0, var_noise=0.0, replicates=1,
        )
        data = gen_outcomes_sim1(cfg, generator(5, 1))
        a = data.times.times
        for t in range(4):
            expected = 0.5 * t + (a + 1 == t)
            assert np.array_equal(data.outcomes[:, t], expected)

    def test_linear_time_slope_is_one_half(self):
        cfg = Sim1Config(
            n_units=10, n_times=4, var_unit=0.0, var_covariate=0.25,
            var_noise=0.0, replicates=1,
        )
        data = gen_outcomes_sim1(cfg, generator(6, 1))
        assert np.allclose(np.diff(data.outcomes, axis=1), 0.5)

    def test_unit_intercept_variance(self):
        # with covariate and noise silenced, column 0 is the intercept
        cfg = Sim1Config(
            n_units=20_000, n_times=2, var_unit=0.25, var_covariate=0.0,
            var_noise=0.0, replicates=1,
        )
        draws = np.concatenate(
            [gen_outcomes_sim1(cfg, generator(7, rep)).outcomes[:, 0] for rep in range(5)]
        )
        assert draws.size == 100_000
        assert abs(draws.var() / 0.25 - 1.0) < 0.10

    def test_effect_vector_model_reduces_to_single_effect_model(self):
        common = dict(var_unit=0.25, var_covariate=0.25, var_noise=0.1)
        cfg1 = Sim1Config(n_units=30, n_times=4, lag=2, effect=0.7, **common)
        cfg2 = Sim2Config(
            n_units=30, n_times=4, taus=(0.0, 0.0, 0.7, 0.0),
            interaction=0, **common,
        )
        d1 = gen_outcomes_sim1(cfg1, generator(8, 3))
        d2 = gen_outcomes_sim2(cfg2, generator(8, 3))
        assert np.array_equal(d1.times.times, d2.times.times)
        assert np.array_equal(d1.outcomes, d2.outcomes)

    def test_quadratic_interaction_bends_trajectories(self):
        # noise-free interaction=1 outcomes are quadratic in time with
        # second difference exactly 2 * 0.1
        cfg = Sim2Config(
            n_units=8, n_times=4, taus=(0.0,) * 4, interaction=1,
            var_unit=0.0, var_covariate=0.25, var_noise=0.0,
        )
        data = gen_outcomes_sim2(cfg, generator(9, 1))
        second = np.diff(data.outcomes, n=2, axis=1)
        assert np.allclose(second, 0.2)

    def test_interaction_shrinks_the_linear_slope(self):
        # with the covariate silenced the interaction term is a pure
        # function of t, so the linear part is identifiable exactly
        cfg = Sim2Config(
            n_units=6, n_times=3, taus=(0.0,) * 3, interaction=3,
            var_unit=0.0, var_covariate=0.0, var_noise=0.0,
        )
        data = gen_outcomes_sim2(cfg, generator(10, 1))
        t = np.arange(4)
        expected = 0.45 * t + 0.1 * 5.0 * np.tanh(t)
        assert np.allclose(data.outcomes, expected[None, :])


class TestPowerStudy:
    def test_infeasible_tuple_cells_are_skipped_with_reason(self):
        result = power_study(
            [(12, 3, 5, 0.1), (12, 3, 0, 0.0)], replicates=5, budget=49
        )
        assert len(result.skipped) == 1
        cell, reason = result.skipped[0]
        assert cell == repr((12, 3, 5, 0.1)) and "lag" in reason
        assert {r.lag for r in result.rows} == {0}

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError, match="unknown methods"):
            power_study([(12, 3, 0, 0.0)], methods=("mcrts_z", "anova"))

    def test_rows_per_method_and_replicate_override(self):
        cfg = Sim1Config(n_units=16, n_times=2, replicates=3, seed=21)
        result = power_study([cfg], replicates=8, budget=49)
        assert len(result.rows) == 3
        assert all(r.replicates == 8 for r in result.rows)
        assert {r.method for r in result.rows} == {"mcrts_z", "mcrts_f", "bonferroni"}
        assert len(result.rows_for(method="mcrts_z")) == 1

    def test_replicate_reproducible_from_public_pieces(self):
        # one replicate re-derived by hand: same dataset stream, same
        # per-test streams, both combiners read the same family run
        cfg = Sim1Config(n_units=20, n_times=3, lag=1, effect=0.5, seed=31)
        out = _power_replicate((cfg, 4, 0.05, 99, ("mcrts_z", "mcrts_f"), "diff_in_means"))
        data = gen_outcomes_sim1(cfg, generator(31, _POWER_TAG, 4, 0))
        res = run_mcrts(
            data, 1, TestConfig(budget=99, seed=seed_sequence(31, _POWER_TAG, 4, 1))
        )
        for name, combiner in (("mcrts_z", "weighted_z"), ("mcrts_f", "fisher")):
            p = combined_from_mcrt(res, combiner, "two-sided").p_value
            assert out[name] == (p <= 0.05)

    def test_power_rises_with_the_effect(self):
        result = power_study(
            [(24, 2, 0, 0.0), (24, 2, 0, 1.5)],
            replicates=60, budget=99, methods=("mcrts_z",), seed=41,
        )
        null_rate = result.rows_for(effect=0.0)[0].rate
        alt_rate = result.rows_for(effect=1.5)[0].rate
        assert alt_rate > null_rate + 0.3


class TestCoverageStudy:
    def test_rows_and_lag_validation(self):
        cfg = Sim2Config(
            n_units=24, n_times=3, taus=(0.0, 0.5, 0.0), replicates=3, seed=51
        )
        with pytest.raises(ValueError, match="lag 5 out of range"):
            coverage_study(cfg, lags=(5,))
        result = coverage_study(
            cfg, methods=("weighted_z", "fisher"), lags=(0, 1), budget=99
        )
        assert len(result.rows) == 4
        row = result.rows_for(lag=1, method="weighted_z")[0]
        assert row.effect == 0.5 and row.replicates == 3
        assert row.covered + row.bracket_failures <= row.replicates
        assert row.mean_length >= 0.0


class TestRowValidation:
    def test_power_row_checks_the_stderr_formula(self):
        with pytest.raises(ValueError, match="binomial formula"):
            PowerRow(10, 2, 0, 0.0, "mcrts_z", 100, 20, 0.2, 0.9)
        row = PowerRow.from_counts(10, 2, 0, 0.0, "mcrts_z", 100, 20)
        assert row.rate == 0.2
        assert row.stderr == pytest.approx(math.sqrt(0.2 * 0.8 / 100))

    def test_coverage_row_checks_the_rate_range(self):
        with pytest.raises(ValueError, match="coverage"):
            CoverageRow(10, 2, 0, 0.9, 0, 0.0, "weighted_z", 5, 3, 1.5, 0.1, 0.2, 0)


class TestTables:
    def test_power_round_trip(self, tmp_path):
        result = power_study([(16, 2, 0, 0.4)], replicates=6, budget=49, seed=61)
        path = tmp_path / "power.csv"
        emit_tables(result, path)
        back = parse_tables(path)
        assert back.study == "power" and back.rows == result.rows

    def test_coverage_round_trip(self, tmp_path):
        cfg = Sim2Config(
            n_units=24, n_times=3, taus=(0.0, 0.3, 0.0), replicates=2, seed=71
        )
        result = coverage_study(cfg, lags=(1,), budget=99)
        path = tmp_path / "coverage.csv"
        emit_tables(result, path)
        back = parse_tables(path)
        assert back.study == "coverage" and back.rows == result.rows

    def test_unknown_study_kind_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="unknown study kind"):
            emit_tables(StudyResult("junk", ()), tmp_path / "junk.csv")

    def test_unrecognized_header_rejected(self, tmp_path):
        path = tmp_path / "odd.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(DataFormatError, match="unrecognized table header"):
            parse_tables(path)

    def test_corrupt_row_cites_its_line(self, tmp_path):
        result = power_study([(16, 2, 0, 0.0)], replicates=4, budget=49)
        path = tmp_path / "power.csv"
        emit_tables(result, path)
        lines = path.read_text().splitlines()
        lines[1] = lines[1].rsplit(",", 1)[0] + ",not-a-float"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataFormatError, match="line 2"):
            parse_tables(path)


class TestDeterminism:
    def test_power_tables_identical_across_thread_counts(self, tmp_path):
        kwargs = dict(replicates=8, budget=49, seed=81)
        serial = power_study([(16, 2, 0, 0.3)], threads=1, **kwargs)
        fanned = power_study([(16, 2, 0, 0.3)], threads=2, **kwargs)
        p1, p2 = tmp_path / "serial.csv", tmp_path / "fanned.csv"
        emit_tables(serial, p1)
        emit_tables(fanned, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_coverage_tables_identical_across_thread_counts(self, tmp_path):
        cfg = Sim2Config(
            n_units=24, n_times=3, taus=(0.0, 0.4, 0.0), replicates=4, seed=91
        )
        serial = coverage_study(cfg, lags=(1,), budget=99, threads=1)
        fanned = coverage_study(cfg, lags=(1,), budget=99, threads=2)
        p1, p2 = tmp_path / "serial.csv", tmp_path / "fanned.csv"
        emit_tables(serial, p1)
        emit_tables(fanned, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_same_seed_same_rows(self):
        a = power_study([(16, 2, 0, 0.2)], replicates=5, budget=49, seed=13)
        b = power_study([(16, 2, 0, 0.2)], replicates=5, budget=49, seed=13)
        assert a.rows == b.rows
