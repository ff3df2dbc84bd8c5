"""Shared fixtures and builders for the test suite."""

import numpy as np
import pytest

from wedgeperm import CrossoverTimes, DesignSpec, TrialData, sample_assignment, crossover_times
from wedgeperm.rng import generator


def make_trial(
    n_units: int,
    counts,
    lag: int = 0,
    effect: float = 0.0,
    seed: int = 11,
    noise: float = 1.0,
) -> TrialData:
    """A synthetic trial: i.i.d. noise plus a constant lagged effect.

    The effect is added at each unit's crossover time plus ``lag`` (when
    that column exists), matching the analysis target.
    """
    spec = DesignSpec(n_units, tuple(counts))
    rng = generator(seed, 5)
    times = crossover_times(sample_assignment(spec, rng))
    T = spec.n_times
    y = rng.normal(0.0, noise, (n_units, T + 1)) if noise > 0 else np.zeros((n_units, T + 1))
    cols = times.times + lag
    ok = cols <= T
    y[np.flatnonzero(ok), cols[ok]] += effect
    return TrialData(np.arange(n_units), times, y)


def constant_baseline_trial(times: CrossoverTimes, lag: int, effect: float) -> TrialData:
    """Zero-noise panel whose only signal is the lagged effect."""
    n, T = times.n_units, times.n_times
    y = np.zeros((n, T + 1))
    cols = times.times + lag
    ok = cols <= T
    y[np.flatnonzero(ok), cols[ok]] += effect
    return TrialData(np.arange(n), times, y)


@pytest.fixture
def tiny_trial() -> TrialData:
    """Small effect-free trial reused across modules."""
    return make_trial(24, (8, 8, 8), seed=3)
