"""Combining dependent one-sided p-values.

Jointly valid p-value families stochastically dominate independent
uniforms, so classical combiners keep their level even though the tests
share data.  Three are provided: inverse-normal with precision-derived
weights (the headline method), Fisher's product rule, and Bonferroni.

Direction convention: a combiner consumes one-sided p-values from a
single tail.  The two-sided mode combines each tail separately and
reports twice the smaller combined p-value, capped at 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaincc, ndtr, ndtri

__all__ = [
    "CombinedPValue",
    "WeightVector",
    "estimate_lambda",
    "weights_from_result",
    "weighted_z_combine",
    "fisher_combine",
    "bonferroni_combine",
    "combined_from_tests",
    "combined_from_mcrt",
    "COMBINERS",
]

COMBINERS = ("weighted_z", "fisher", "bonferroni")


@dataclass(frozen=True)
class CombinedPValue:
    method: str
    alternative: str  # "less" | "greater" | "two-sided"
    statistic: float
    p_value: float
    n_tests: int

    def __post_init__(self):
        if not 0.0 < self.p_value <= 1.0:
            raise ValueError("combined p-value must lie in (0, 1]")


@dataclass(frozen=True)
class WeightVector:
    """Per-test combining weights, squares summing to one.

    ``lambdas`` holds the unnormalized precisions the weights came
    from (when known); ``excluded`` lists (test time, reason) pairs for
    tests that could not be weighted — their p-values are left out of
    the weighted-Z combination and the remaining weights are
    renormalized.
    """

    weights: np.ndarray
    test_times: tuple[int, ...]
    excluded: tuple[tuple[int, str], ...] = ()
    lambdas: np.ndarray | None = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, copy=True)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty 1-d vector")
        if (w <= 0).any():
            raise ValueError("weights must be strictly positive")
        if abs(float((w**2).sum()) - 1.0) > 1e-12:
            raise ValueError("squared weights must sum to 1 within 1e-12")
        if w.size != len(self.test_times):
            raise ValueError("one weight per test time required")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if self.lambdas is not None:
            lam = np.array(self.lambdas, dtype=np.float64, copy=True)
            if lam.shape != w.shape or (lam <= 0).any():
                raise ValueError("lambdas must be positive, one per weight")
            if not np.allclose(w, np.sqrt(lam / lam.sum()), rtol=0, atol=1e-12):
                raise ValueError("weights must equal sqrt(lambda / sum(lambda))")
            lam.setflags(write=False)
            object.__setattr__(self, "lambdas", lam)


def _lambda_from_moments(
    var_treated: float, var_control: float, n_treated: int, n_control: int, n_total: int
) -> float:
    """Inverse asymptotic variance of the root-N difference in means.

    The treated-arm variance is divided by the control size and vice
    versa; that cross-matching is what the root-N statistic's
    permutation variance works out to.
    """
    if n_treated < 1 or n_control < 1 or n_total < n_treated + n_control:
        raise ValueError("arm sizes must be positive and fit inside n_total")
    if not (np.isfinite(var_treated) and np.isfinite(var_control)):
        raise ValueError("arm variances must be finite")
    if var_treated < 0 or var_control < 0:
        raise ValueError("arm variances must be non-negative")
    denom = (n_total / n_control) * var_treated + (n_total / n_treated) * var_control
    if denom <= 0:
        raise ValueError("zero variance in both arms: precision weight undefined")
    return 1.0 / denom


def estimate_lambda(treated, control, n_total: int) -> float:
    """Estimated precision of one test from its group outcomes.

    Sample variances (ddof=1) plug into the cross-matched formula;
    both arms need at least two observations, and outcomes constant in
    both arms are rejected since the weight would be infinite.
    """
    t = np.asarray(treated, dtype=np.float64)
    c = np.asarray(control, dtype=np.float64)
    if t.size < 2 or c.size < 2:
        raise ValueError("need at least two outcomes per arm to estimate a variance")
    return _lambda_from_moments(
        float(t.var(ddof=1)), float(c.var(ddof=1)), t.size, c.size, int(n_total)
    )


def _weights_from_moments(tests, n_total: int) -> WeightVector:
    lambdas: list[float] = []
    kept_times: list[int] = []
    excluded: list[tuple[int, str]] = []
    for t in tests:
        try:
            lam = _lambda_from_moments(
                t.var_treated, t.var_control, t.n_treated, t.n_control, n_total
            )
        except ValueError as exc:
            excluded.append((t.test_time, str(exc)))
            continue
        lambdas.append(lam)
        kept_times.append(t.test_time)
    if not lambdas:
        raise ValueError("no test could be weighted: " + "; ".join(r for _, r in excluded))
    lam = np.asarray(lambdas)
    return WeightVector(np.sqrt(lam / lam.sum()), tuple(kept_times), tuple(excluded), lam)


def weights_from_result(result) -> WeightVector:
    """Precision weights for an McrtResult, renormalized over usable tests.

    Tests skipped by the engine never appear; a surviving test whose
    arms are both constant is excluded here with a reason.  Squared
    weights sum to one across the whole family, not per subset.
    """
    if not result.tests:
        raise ValueError("result contains no completed tests to weight")
    return _weights_from_moments(result.tests, result.n_units)


def _validate_pvalues(pvalues) -> np.ndarray:
    p = np.asarray(pvalues, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("need a non-empty 1-d vector of p-values")
    if (p <= 0).any():
        raise ValueError("p-values must be strictly positive")
    if (p > 1).any():
        raise ValueError("p-values cannot exceed 1")
    return p


def _cap_for_quantile(p: np.ndarray, granularity) -> np.ndarray:
    """Replace p = 1 by 1 - granularity/2 so the normal quantile stays finite.

    ``granularity`` is the smallest attainable p-value increment of each
    test (1/(B+1) for Monte Carlo, 1/M for exact); Monte-Carlo
    resolution rather than an infinity then sets the ceiling.
    """
    if not (p >= 1.0).any():
        return p
    if granularity is None:
        raise ValueError(
            "a p-value of exactly 1 needs the test's resolution (granularity) to be capped"
        )
    g = np.broadcast_to(np.asarray(granularity, dtype=np.float64), p.shape)
    if (g <= 0).any() or (g > 1).any():
        raise ValueError("granularity values must lie in (0, 1]")
    return np.where(p >= 1.0, 1.0 - g / 2.0, p)


def weighted_z_combine(pvalues, weights, granularity=None) -> CombinedPValue:
    """Weighted inverse-normal combination.

    Computes sum_k w_k * Phi^{-1}(p_k) and maps it back through Phi.
    Weights must be positive with squares summing to one; under joint
    validity the result again stochastically dominates Uniform(0, 1).
    """
    p = _validate_pvalues(pvalues)
    w = weights.weights if isinstance(weights, WeightVector) else np.asarray(weights, dtype=np.float64)
    if w.shape != p.shape:
        raise ValueError("weights and p-values must align")
    if (w <= 0).any():
        raise ValueError("weights must be strictly positive")
    if abs(float((w**2).sum()) - 1.0) > 1e-12:
        raise ValueError("squared weights must sum to 1 within 1e-12")
    z = ndtri(_cap_for_quantile(p, granularity))
    stat = float(np.dot(w, z))
    return CombinedPValue("weighted_z", "one-sided", stat, float(ndtr(stat)), p.size)


def fisher_combine(pvalues) -> CombinedPValue:
    """Fisher's product rule: -2 sum(log p) against a chi-square with 2K df."""
    p = _validate_pvalues(pvalues)
    stat = float(-2.0 * np.log(p).sum())
    # upper chi-square tail with 2K degrees of freedom via the
    # regularized incomplete gamma function
    pval = float(gammaincc(p.size, stat / 2.0))
    return CombinedPValue("fisher", "one-sided", stat, max(pval, np.nextafter(0, 1)), p.size)


def bonferroni_combine(pvalues) -> CombinedPValue:
    """min(1, K * min p); valid under arbitrary dependence."""
    p = _validate_pvalues(pvalues)
    m = float(p.min())
    return CombinedPValue("bonferroni", "one-sided", m, min(1.0, p.size * m), p.size)


def _combine_tail(pvalues, method: str, weights=None, granularity=None) -> CombinedPValue:
    if method == "weighted_z":
        if weights is None:
            raise ValueError("weighted_z needs a weight vector")
        return weighted_z_combine(pvalues, weights, granularity)
    if method == "fisher":
        return fisher_combine(pvalues)
    if method == "bonferroni":
        return bonferroni_combine(pvalues)
    raise ValueError(f"unknown combiner {method!r}; choose from {COMBINERS}")


def combined_from_tests(tests: Sequence, n_total: int, method: str, alternative: str = "greater") -> CombinedPValue:
    """Combine the p-values of completed tests.

    ``alternative`` is "greater" (treatment raises outcomes, the
    default), "less", or "two-sided" (both tails combined separately,
    then twice the smaller combined p, capped at 1).  For weighted_z,
    tests without estimable precision are dropped from the combination
    with their weight.
    """
    tests = list(tests)
    if not tests:
        raise ValueError("no tests to combine")
    if method == "weighted_z":
        wv = _weights_from_moments(tests, n_total)
        kept = [t for t in tests if t.test_time in set(wv.test_times)]
        weights = wv
    else:
        kept = tests
        weights = None
    gran = np.asarray([t.granularity for t in kept])

    def one_tail(tail: str) -> CombinedPValue:
        p = np.asarray([t.result.p_less if tail == "less" else t.result.p_greater for t in kept])
        c = _combine_tail(p, method, weights, gran)
        return CombinedPValue(method, tail, c.statistic, c.p_value, c.n_tests)

    if alternative in ("less", "greater"):
        return one_tail(alternative)
    if alternative != "two-sided":
        raise ValueError("alternative must be 'less', 'greater', or 'two-sided'")
    lo = one_tail("less")
    hi = one_tail("greater")
    side = lo if lo.p_value <= hi.p_value else hi
    return CombinedPValue(
        method, "two-sided", side.statistic, min(1.0, 2.0 * side.p_value), side.n_tests
    )


def combined_from_mcrt(result, method: str, alternative: str = "greater") -> CombinedPValue:
    """Convenience wrapper over combined_from_tests for an McrtResult."""
    return combined_from_tests(result.tests, result.n_units, method, alternative)
