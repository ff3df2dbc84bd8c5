"""Two-group permutation tests.

The engine relabels a pooled outcome vector (treated slots first) and
reports both one-sided p-values with ties counted inclusively.  Small
pools are enumerated exactly; larger ones fall back to Monte Carlo with
the add-one correction (1 + count) / (budget + 1).

Monte-Carlo resamples are drawn in fixed blocks of 1024, each block on
a stream derived from (seed, block index), so results never depend on
how work is scheduled.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .rng import seed_sequence

__all__ = [
    "TwoGroupSample",
    "PermutationResult",
    "RelabelPlan",
    "STATISTICS",
    "diff_in_means",
    "rank_sum",
    "statistic_value",
    "relabel_plan",
    "permutation_pvalue",
]

STATISTICS = ("diff_in_means", "rank_sum")

DEFAULT_BUDGET = 999
DEFAULT_EXACT_THRESHOLD = 20_000

_BLOCK = 1024  # resamples per derived stream


@dataclass(frozen=True)
class TwoGroupSample:
    """Treated and control outcome vectors plus the root-N scale factor.

    ``scale_n`` is the total trial size entering the sqrt(N) factor of
    the difference-in-means statistic; it need not equal the pooled
    sample size (lagged tests use subsets of the trial).
    """

    treated: np.ndarray
    control: np.ndarray
    scale_n: int

    def __post_init__(self):
        for name in ("treated", "control"):
            arr = np.array(getattr(self, name), dtype=np.float64, copy=True)
            if arr.ndim != 1 or arr.size < 1:
                raise ValueError(f"{name} group must be a non-empty 1-d array")
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} group contains non-finite values")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = int(self.scale_n)
        if n < 1:
            raise ValueError("scale_n must be a positive integer")
        object.__setattr__(self, "scale_n", n)

    @property
    def n_treated(self) -> int:
        return int(self.treated.size)

    @property
    def n_control(self) -> int:
        return int(self.control.size)

    def pooled(self) -> np.ndarray:
        """Pooled outcomes, treated slots first."""
        return np.concatenate([self.treated, self.control])


def diff_in_means(sample: TwoGroupSample) -> float:
    """sqrt(scale_n) times (treated mean minus control mean)."""
    return math.sqrt(sample.scale_n) * (float(sample.treated.mean()) - float(sample.control.mean()))


def rank_sum(sample: TwoGroupSample) -> float:
    """Sum of the treated group's midranks in the pooled sample."""
    ranks = rankdata(sample.pooled())
    return float(ranks[: sample.n_treated].sum())


def statistic_value(sample: TwoGroupSample, statistic: str) -> float:
    if statistic == "diff_in_means":
        return diff_in_means(sample)
    if statistic == "rank_sum":
        return rank_sum(sample)
    raise ValueError(f"unknown statistic {statistic!r}; choose from {STATISTICS}")


def _transform_pool(pool: np.ndarray, statistic: str) -> np.ndarray:
    """Map the pool so that every supported statistic is a monotone
    function of the selected-slot sum of the transformed values."""
    if statistic == "diff_in_means":
        return pool
    if statistic == "rank_sum":
        return rankdata(pool)
    raise ValueError(f"unknown statistic {statistic!r}; choose from {STATISTICS}")


@dataclass(frozen=True)
class RelabelPlan:
    """A reusable draw of treated-slot selections for one pool size.

    ``selections`` has one row per relabeling, listing which pooled
    slots are called treated.  Exact plans enumerate all C(m+n, m)
    subsets; Monte-Carlo plans hold ``n_resamples`` uniform draws.
    """

    selections: np.ndarray
    n_treated: int
    pool_size: int
    exact: bool

    @property
    def n_resamples(self) -> int:
        return int(self.selections.shape[0])

    def sums(self, values: np.ndarray) -> np.ndarray:
        """Selected-slot sums of ``values`` for every relabeling."""
        return values[self.selections].sum(axis=1)

    def treated_hits(self) -> np.ndarray:
        """Per relabeling, how many originally-treated slots were selected."""
        return (self.selections < self.n_treated).sum(axis=1)


def relabel_plan(
    pool_size: int,
    n_treated: int,
    budget: int = DEFAULT_BUDGET,
    exact_threshold: int = DEFAULT_EXACT_THRESHOLD,
    seed=None,
) -> RelabelPlan:
    """Enumerate or sample treated-slot selections for a pooled test."""
    if not 1 <= n_treated < pool_size:
        raise ValueError("need at least one treated and one control slot")
    if budget < 1:
        raise ValueError("resample budget must be at least 1")
    total = math.comb(pool_size, n_treated)
    if total <= exact_threshold:
        sel = np.fromiter(
            itertools.chain.from_iterable(itertools.combinations(range(pool_size), n_treated)),
            dtype=np.intp,
            count=total * n_treated,
        ).reshape(total, n_treated)
        return RelabelPlan(sel, n_treated, pool_size, True)
    root = seed_sequence(seed)
    n_blocks = (budget + _BLOCK - 1) // _BLOCK
    parts = []
    remaining = budget
    for block, child in enumerate(root.spawn(n_blocks)):
        take = min(_BLOCK, remaining)
        remaining -= take
        rng = np.random.default_rng(child)
        keys = rng.random((take, pool_size))
        # the n_treated smallest keys per row form a uniform subset
        parts.append(np.argpartition(keys, n_treated - 1, axis=1)[:, :n_treated])
    sel = np.vstack(parts)
    return RelabelPlan(sel, n_treated, pool_size, False)


def _tail_probs(sums: np.ndarray, observed: float, exact: bool) -> tuple[float, float]:
    n = sums.size
    n_le = int((sums <= observed).sum())
    n_ge = int((sums >= observed).sum())
    if exact:
        return n_le / n, n_ge / n
    return (1 + n_le) / (n + 1), (1 + n_ge) / (n + 1)


@dataclass(frozen=True)
class PermutationResult:
    """Observed statistic and both one-sided permutation p-values."""

    statistic: float
    p_less: float
    p_greater: float
    n_resamples: int
    exact: bool
    statistic_name: str = "diff_in_means"

    def __post_init__(self):
        if not (0.0 < self.p_less <= 1.0 and 0.0 < self.p_greater <= 1.0):
            raise ValueError("one-sided p-values must lie in (0, 1]")
        if self.p_less + self.p_greater < 1.0:
            raise ValueError("tail p-values must overlap at ties (sum >= 1)")

    @property
    def granularity(self) -> float:
        """Smallest attainable p-value increment for this test."""
        return 1.0 / self.n_resamples if self.exact else 1.0 / (self.n_resamples + 1)


def permutation_pvalue(
    sample: TwoGroupSample,
    budget: int = DEFAULT_BUDGET,
    statistic: str = "diff_in_means",
    exact_threshold: int = DEFAULT_EXACT_THRESHOLD,
    seed=None,
    plan: RelabelPlan | None = None,
) -> PermutationResult:
    """Both one-sided p-values for a two-group comparison.

    p_less is the relabeling probability of a statistic <= the observed
    one, p_greater of >=; ties count toward both tails.  When all
    C(m+n, m) relabelings fit under ``exact_threshold`` the reference
    distribution is enumerated and ``budget`` is ignored; otherwise
    ``budget`` Monte-Carlo relabelings are drawn on streams derived from
    ``seed`` and the add-one correction keeps p-values positive.

    A precomputed ``plan`` may be supplied to share relabelings across
    calls (the confidence-interval search relies on this).
    """
    if plan is None:
        plan = relabel_plan(
            sample.n_treated + sample.n_control,
            sample.n_treated,
            budget=budget,
            exact_threshold=exact_threshold,
            seed=seed,
        )
    values = _transform_pool(sample.pooled(), statistic)
    observed_sum = float(values[: sample.n_treated].sum())
    p_less, p_greater = _tail_probs(plan.sums(values), observed_sum, plan.exact)
    return PermutationResult(
        statistic=statistic_value(sample, statistic),
        p_less=p_less,
        p_greater=p_greater,
        n_resamples=plan.n_resamples,
        exact=plan.exact,
        statistic_name=statistic,
    )
