"""Power, size, and coverage studies for lagged-effect permutation tests.

Two synthetic outcome models drive the studies.  The first draws a
unit intercept, a unit covariate with a linear time trend, i.i.d.
noise, and a single lagged effect; it powers the size/power study
grids.  The second layers a possibly nonlinear covariate interaction
and a whole vector of lagged effects on top, and feeds the
interval-coverage study.

Everything is deterministic given (config, seed): datasets come from a
stream keyed by (seed, study tag, replicate), test relabelings from
(seed, study tag, replicate, test time), and replicates parallelize
over processes with order-preserving collection, so the emitted CSV
tables are byte-identical no matter how many workers run.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .ci import CIConfig, GridBracketError, invert_combined
from .combine import combined_from_mcrt
from .design import DesignSpec, crossover_times, sample_assignment
from .mcrt import TestConfig, TrialData, run_mcrts
from .permtest import TwoGroupSample, permutation_pvalue
from .rng import DEFAULT_SEED, generator, seed_sequence

__all__ = [
    "Sim1Config",
    "Sim2Config",
    "PowerRow",
    "CoverageRow",
    "StudyResult",
    "POWER_METHODS",
    "default_counts",
    "interaction_f",
    "gen_outcomes_sim1",
    "gen_outcomes_sim2",
    "power_study",
    "coverage_study",
    "emit_tables",
    "parse_tables",
]

POWER_METHODS = ("mcrts_z", "mcrts_f", "bonferroni")
_POWER_TAG = 101
_COVERAGE_TAG = 202

_POWER_HEADER = [
    "study", "n_units", "n_times", "lag", "effect", "method",
    "replicates", "rejections", "rate", "stderr",
]
_COVERAGE_HEADER = [
    "study", "n_units", "n_times", "interaction", "level", "lag", "effect",
    "method", "replicates", "covered", "coverage", "stderr",
    "mean_length", "bracket_failures",
]


def default_counts(n_units: int, n_times: int) -> tuple[int, ...]:
    """Equal crossings per period, remainder absorbed by the last one."""
    if n_times < 2:
        raise ValueError("need at least two periods")
    base = n_units // n_times
    if base < 1:
        raise ValueError("need at least one unit per period")
    return (base,) * (n_times - 1) + (n_units - base * (n_times - 1),)


@dataclass(frozen=True)
class Sim1Config:
    """One cell of the size/power study: a single lagged effect.

    Outcomes follow intercept + 0.5*(covariate + time) + effect + noise
    with the effect applied only ``lag`` steps after each unit crosses
    over.  Variances may be zero, which degenerates that term — handy
    for deterministic sanity checks.
    """

    n_units: int = 100
    n_times: int = 6
    lag: int = 0
    effect: float = 0.0
    var_unit: float = 0.25
    var_covariate: float = 0.25
    var_noise: float = 0.1
    replicates: int = 300
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        default_counts(self.n_units, self.n_times)  # feasibility
        if not 0 <= self.lag <= self.n_times - 2:
            raise ValueError(f"lag must lie in [0, {self.n_times - 2}]")
        for name in ("var_unit", "var_covariate", "var_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.replicates < 1:
            raise ValueError("replicates must be positive")


@dataclass(frozen=True)
class Sim2Config:
    """Coverage-study model: effect vector plus covariate interaction.

    ``interaction`` selects the extra covariate term: 0 none, 1
    quadratic, 2 exponential, 3 saturating; any nonzero choice also
    shrinks the linear covariate slope from 0.5 to 0.45.
    """

    n_units: int = 200
    n_times: int = 8
    taus: tuple[float, ...] = (0.1, 0.3, 0.6, 0.4, 0.2, 0.0, 0.0, 0.0)
    interaction: int = 0
    var_unit: float = 0.25
    var_covariate: float = 0.25
    var_noise: float = 0.1
    replicates: int = 300
    seed: int = DEFAULT_SEED
    level: float = 0.90

    def __post_init__(self):
        default_counts(self.n_units, self.n_times)
        if len(self.taus) != self.n_times:
            raise ValueError(f"need one effect per lag 0..{self.n_times - 1}")
        if self.interaction not in (0, 1, 2, 3):
            raise ValueError("interaction must be 0, 1, 2, or 3")
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must lie in (0, 1)")
        for name in ("var_unit", "var_covariate", "var_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.replicates < 1:
            raise ValueError("replicates must be positive")


def interaction_f(m: int, x):
    """The nonlinear covariate term: 0, x^2, 2*exp(x/2), or 5*tanh(x)."""
    x = np.asarray(x, dtype=np.float64)
    if m == 0:
        return np.zeros_like(x)
    if m == 1:
        return x**2
    if m == 2:
        return 2.0 * np.exp(x / 2.0)
    if m == 3:
        return 5.0 * np.tanh(x)
    raise ValueError("interaction index must be 0, 1, 2, or 3")


def _panel(cfg, rng, slope: float, interaction: int) -> tuple[np.ndarray, np.ndarray]:
    """Crossover times and the no-effect outcome panel for periods 0..T.

    Draw order is fixed (times, intercepts, covariates, noise) so a
    given stream always produces the same dataset.
    """
    spec = DesignSpec(cfg.n_units, default_counts(cfg.n_units, cfg.n_times))
    times = crossover_times(sample_assignment(spec, rng))
    n, T = cfg.n_units, cfg.n_times
    mu = rng.normal(0.0, math.sqrt(cfg.var_unit), n)
    x = rng.normal(0.0, math.sqrt(cfg.var_covariate), n)
    eps = rng.normal(0.0, math.sqrt(cfg.var_noise), (n, T + 1))
    shifted = x[:, None] + np.arange(T + 1)[None, :]
    y = mu[:, None] + slope * shifted + 0.1 * interaction_f(interaction, shifted) + eps
    return times, y


def _add_effect(y: np.ndarray, crossover: np.ndarray, lag: int, effect: float) -> None:
    """Add ``effect`` at each unit's column crossover + lag, in place."""
    if effect == 0.0:
        return
    cols = crossover + lag
    ok = cols < y.shape[1]
    y[np.flatnonzero(ok), cols[ok]] += effect


def gen_outcomes_sim1(cfg: Sim1Config, rng) -> TrialData:
    """One dataset from the single-effect model."""
    times, y = _panel(cfg, rng, slope=0.5, interaction=0)
    _add_effect(y, times.times, cfg.lag, cfg.effect)
    return TrialData(np.arange(cfg.n_units), times, y)


def gen_outcomes_sim2(cfg: Sim2Config, rng) -> TrialData:
    """One dataset from the effect-vector + interaction model."""
    slope = 0.5 * (1.0 - 0.1 * (cfg.interaction != 0))
    times, y = _panel(cfg, rng, slope=slope, interaction=cfg.interaction)
    for lag, tau in enumerate(cfg.taus):
        _add_effect(y, times.times, lag, tau)
    return TrialData(np.arange(cfg.n_units), times, y)


@dataclass(frozen=True)
class PowerRow:
    n_units: int
    n_times: int
    lag: int
    effect: float
    method: str
    replicates: int
    rejections: int
    rate: float
    stderr: float

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("rate must lie in [0, 1]")
        expected = math.sqrt(self.rate * (1.0 - self.rate) / self.replicates)
        if abs(self.stderr - expected) > 1e-9:
            raise ValueError("stderr does not match the binomial formula")

    @classmethod
    def from_counts(cls, n_units, n_times, lag, effect, method, replicates, rejections):
        rate = rejections / replicates
        return cls(
            n_units, n_times, lag, float(effect), method, replicates, rejections,
            rate, math.sqrt(rate * (1.0 - rate) / replicates),
        )


@dataclass(frozen=True)
class CoverageRow:
    n_units: int
    n_times: int
    interaction: int
    level: float
    lag: int
    effect: float
    method: str
    replicates: int
    covered: int
    coverage: float
    stderr: float
    mean_length: float
    bracket_failures: int

    def __post_init__(self):
        if not 0.0 <= self.coverage <= 1.0:
            raise ValueError("coverage must lie in [0, 1]")

    @classmethod
    def from_counts(
        cls, n_units, n_times, interaction, level, lag, effect, method,
        replicates, covered, total_length, bracket_failures,
    ):
        usable = replicates - bracket_failures
        coverage = covered / usable if usable else 0.0
        stderr = math.sqrt(coverage * (1.0 - coverage) / usable) if usable else 0.0
        mean_length = total_length / usable if usable else 0.0
        return cls(
            n_units, n_times, interaction, float(level), lag, float(effect), method,
            replicates, covered, coverage, stderr, mean_length, bracket_failures,
        )


@dataclass(frozen=True)
class StudyResult:
    """Rows of one study plus any cells skipped as infeasible."""

    study: str  # "power" or "coverage"
    rows: tuple
    skipped: tuple[tuple[str, str], ...] = ()

    def rows_for(self, **match) -> list:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in match.items())]


def _parallel_map(fn, tasks: Sequence, threads: int) -> list:
    """Order-preserving map, optionally fanned out over processes."""
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * threads))
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks, chunksize=chunk))


def _power_replicate(task) -> dict[str, bool]:
    cfg, rep, alpha, budget, methods, statistic = task
    data = gen_outcomes_sim1(cfg, generator(cfg.seed, _POWER_TAG, rep, 0))
    out: dict[str, bool] = {}
    if "mcrts_z" in methods or "mcrts_f" in methods:
        tcfg = TestConfig(
            budget=budget, statistic=statistic,
            seed=seed_sequence(cfg.seed, _POWER_TAG, rep, 1),
        )
        res = run_mcrts(data, cfg.lag, tcfg)
        for name, combiner in (("mcrts_z", "weighted_z"), ("mcrts_f", "fisher")):
            if name in methods:
                p = combined_from_mcrt(res, combiner, "two-sided").p_value
                out[name] = p <= alpha
    if "bonferroni" in methods:
        p = _bonferroni_naive_pvalue(data, cfg.lag, budget, statistic, cfg.seed, rep)
        out["bonferroni"] = p <= alpha
    return out


def _bonferroni_naive_pvalue(data: TrialData, lag: int, budget: int, statistic: str, seed, rep: int) -> float:
    """Bonferroni over the unconditional comparisons: at each period t,
    units crossing at t against everything still untreated at t + lag,
    each a plain two-group permutation test, two-sided."""
    a = data.times.times
    T = data.n_times
    y = data.outcomes
    pvals = []
    for t in range(1, T - lag):
        treated = np.flatnonzero(a == t)
        control = np.flatnonzero(a >= t + lag + 1)
        if min(treated.size, control.size) < 2:
            continue
        sample = TwoGroupSample(y[treated, t + lag], y[control, t + lag], data.n_units)
        r = permutation_pvalue(
            sample, budget=budget, statistic=statistic,
            seed=seed_sequence(seed, _POWER_TAG, rep, 2, t),
        )
        pvals.append(min(1.0, 2.0 * min(r.p_less, r.p_greater)))
    if not pvals:
        return 1.0
    return min(1.0, len(pvals) * min(pvals))


def power_study(
    grid: Iterable,
    replicates: int | None = None,
    budget: int = 499,
    alpha: float = 0.05,
    methods: Sequence[str] = POWER_METHODS,
    seed: int = DEFAULT_SEED,
    statistic: str = "diff_in_means",
    threads: int = 1,
) -> StudyResult:
    """Rejection rates over a grid of scenario cells.

    ``grid`` holds Sim1Config instances or (n_units, n_times, lag,
    effect) tuples; tuples inherit the study-level replicates and seed.
    Tuple cells that are infeasible (lag too large for the horizon) are
    skipped and listed in the result instead of raising.
    """
    unknown = set(methods) - set(POWER_METHODS)
    if unknown:
        raise ValueError(f"unknown methods: {sorted(unknown)}; choose from {POWER_METHODS}")
    if replicates is not None and replicates < 1:
        raise ValueError("replicates must be positive")
    cells: list[Sim1Config] = []
    skipped: list[tuple[str, str]] = []
    for cell in grid:
        if isinstance(cell, Sim1Config):
            if replicates is not None and cell.replicates != replicates:
                cell = replace(cell, replicates=replicates)
            cells.append(cell)
            continue
        n_units, n_times, lag, effect = cell
        try:
            cells.append(
                Sim1Config(
                    n_units=n_units, n_times=n_times, lag=lag, effect=effect,
                    replicates=replicates if replicates is not None else 300,
                    seed=seed,
                )
            )
        except ValueError as exc:
            skipped.append((repr(tuple(cell)), str(exc)))
    rows = []
    for cfg in cells:
        tasks = [(cfg, rep, alpha, budget, tuple(methods), statistic) for rep in range(cfg.replicates)]
        results = _parallel_map(_power_replicate, tasks, threads)
        for method in methods:
            rejections = sum(r[method] for r in results)
            rows.append(
                PowerRow.from_counts(
                    cfg.n_units, cfg.n_times, cfg.lag, cfg.effect, method,
                    cfg.replicates, rejections,
                )
            )
    return StudyResult("power", tuple(rows), tuple(skipped))


def _coverage_replicate(task) -> list[tuple[int, str, bool, float, bool]]:
    cfg, rep, lags, methods, budget, statistic = task
    data = gen_outcomes_sim2(cfg, generator(cfg.seed, _COVERAGE_TAG, cfg.interaction, rep, 0))
    out = []
    for lag in lags:
        tcfg = TestConfig(
            budget=budget, statistic=statistic,
            seed=seed_sequence(cfg.seed, _COVERAGE_TAG, cfg.interaction, rep, 1, lag),
        )
        ci_cfg = CIConfig(alpha=1.0 - cfg.level, test=tcfg)
        for method in methods:
            try:
                ci = invert_combined(data, lag, ci_cfg, method=method)
            except GridBracketError:
                out.append((lag, method, False, 0.0, True))
                continue
            covered = ci.lower <= cfg.taus[lag] <= ci.upper
            out.append((lag, method, covered, ci.length, False))
    return out


def coverage_study(
    cfg: Sim2Config,
    methods: Sequence[str] = ("weighted_z",),
    replicates: int | None = None,
    lags: Sequence[int] = (0, 1, 2, 3, 4),
    budget: int = 499,
    statistic: str = "diff_in_means",
    threads: int = 1,
) -> StudyResult:
    """Interval coverage of each true lagged effect, per combiner.

    Every replicate draws one dataset and inverts the test family at
    each requested lag; a replicate whose search grid fails to bracket
    an endpoint counts as a bracketing failure for that row rather
    than as a miss.
    """
    if replicates is not None and replicates != cfg.replicates:
        cfg = replace(cfg, replicates=replicates)
    for lag in lags:
        if not 0 <= lag <= cfg.n_times - 2:
            raise ValueError(f"lag {lag} out of range for {cfg.n_times} periods")
    tasks = [
        (cfg, rep, tuple(lags), tuple(methods), budget, statistic)
        for rep in range(cfg.replicates)
    ]
    results = _parallel_map(_coverage_replicate, tasks, threads)
    rows = []
    for lag in lags:
        for method in methods:
            hits = [r for reps in results for r in reps if r[0] == lag and r[1] == method]
            covered = sum(1 for r in hits if r[2])
            total_length = sum(r[3] for r in hits if not r[4])
            failures = sum(1 for r in hits if r[4])
            rows.append(
                CoverageRow.from_counts(
                    cfg.n_units, cfg.n_times, cfg.interaction, cfg.level, lag,
                    cfg.taus[lag], method, cfg.replicates, covered, total_length, failures,
                )
            )
    return StudyResult("coverage", tuple(rows))


def emit_tables(result: StudyResult, path) -> None:
    """Write the study as one CSV with a stable, documented schema.

    Power tables:    study,n_units,n_times,lag,effect,method,replicates,
                     rejections,rate,stderr
    Coverage tables: study,n_units,n_times,interaction,level,lag,effect,
                     method,replicates,covered,coverage,stderr,
                     mean_length,bracket_failures
    Floats are written with repr so parsing them back is lossless.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if result.study == "power":
            writer.writerow(_POWER_HEADER)
            for r in result.rows:
                writer.writerow(
                    [
                        "power", r.n_units, r.n_times, r.lag, repr(r.effect), r.method,
                        r.replicates, r.rejections, repr(r.rate), repr(r.stderr),
                    ]
                )
        elif result.study == "coverage":
            writer.writerow(_COVERAGE_HEADER)
            for r in result.rows:
                writer.writerow(
                    [
                        "coverage", r.n_units, r.n_times, r.interaction, repr(r.level),
                        r.lag, repr(r.effect), r.method, r.replicates, r.covered,
                        repr(r.coverage), repr(r.stderr), repr(r.mean_length),
                        r.bracket_failures,
                    ]
                )
        else:
            raise ValueError(f"unknown study kind {result.study!r}")


def parse_tables(path) -> StudyResult:
    """Read a CSV produced by emit_tables back into a StudyResult."""
    from .design import DataFormatError

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header == _POWER_HEADER:
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    rows.append(
                        PowerRow(
                            int(row[1]), int(row[2]), int(row[3]), float(row[4]), row[5],
                            int(row[6]), int(row[7]), float(row[8]), float(row[9]),
                        )
                    )
                except (ValueError, IndexError) as exc:
                    raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
            return StudyResult("power", tuple(rows))
        if header == _COVERAGE_HEADER:
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    rows.append(
                        CoverageRow(
                            int(row[1]), int(row[2]), int(row[3]), float(row[4]),
                            int(row[5]), float(row[6]), row[7], int(row[8]), int(row[9]),
                            float(row[10]), float(row[11]), float(row[12]), int(row[13]),
                        )
                    )
                except (ValueError, IndexError) as exc:
                    raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
            return StudyResult("coverage", tuple(rows))
    raise DataFormatError(f"{path}: unrecognized table header {header}")
