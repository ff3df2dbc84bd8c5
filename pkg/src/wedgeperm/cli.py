"""Command-line front end: schedule, analyze, simulate, validate.

Exit codes are a stable contract: 0 success, 1 usage or configuration
problems, 2 malformed input data, 3 a theory check that ran and failed.
All randomness flows from --seed (default 12345, fixed so documented
examples reproduce); only the worker count (WEDGEPERM_THREADS) and
color suppression (NO_COLOR) come from the environment.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass

from .ci import CIConfig, GridBracketError, invert_combined, write_ci_csv
from .combine import COMBINERS, combined_from_mcrt, weights_from_result
from .design import DataFormatError
from .mcrt import TestConfig, build_schedule, read_trial_csv, run_mcrts
from .rng import DEFAULT_SEED
from .sim import (
    POWER_METHODS,
    Sim2Config,
    StudyResult,
    coverage_study,
    emit_tables,
    power_study,
)
from .validate import (
    NestednessError,
    all_pairs_nested,
    build_hasse,
    bundled_scenario,
    BUNDLED_SCENARIOS,
    is_partition,
    load_scenario,
)

__all__ = ["CliConfig", "main"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CHECK = 3

PRESETS = {
    "sim1-desk": {
        "study": "power",
        "grid": [[100, 6, 0, 0.0], [100, 6, 1, 0.0], [100, 6, 2, 0.0], [100, 6, 1, 0.3]],
        "replicates": 300,
        "budget": 499,
    },
    "sim2-desk": {
        "study": "coverage",
        "n_units": 100,
        "n_times": 8,
        "interaction": 1,
        "replicates": 200,
        "lags": [0, 1, 2, 3, 4],
        "budget": 499,
    },
}

_POWER_KEYS = {"study", "grid", "replicates", "budget", "alpha", "methods", "seed", "statistic"}
_COVERAGE_KEYS = {
    "study", "n_units", "n_times", "taus", "interaction", "level",
    "replicates", "budget", "methods", "lags", "seed", "statistic",
}


@dataclass(frozen=True)
class CliConfig:
    """Everything a subcommand needs, resolved from flags + environment."""

    command: str
    input: str | None = None
    output: str | None = None
    ci_output: str | None = None
    n_times: int = 0
    lag: int = 0
    alpha: float = 0.10
    combiner: str = "weighted_z"
    budget: int = 499
    statistic: str = "diff_in_means"
    seed: int | None = DEFAULT_SEED
    preset: str | None = None
    config_path: str | None = None
    replicates: int | None = None
    full_scale: bool = False
    threads: int = 1
    grid: tuple[float, float, float] | None = None
    scenario: str | None = None
    scenario_name: str | None = None
    draws: int = 100_000


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage errors exit 1, not 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _color(text: str, code: str) -> str:
    if os.environ.get("NO_COLOR") or not sys.stdout.isatty():
        return text
    return f"\x1b[{code}m{text}\x1b[0m"


def _pass(ok: bool) -> str:
    return _color("pass", "32") if ok else _color("FAIL", "31")


def _threads_from_env(flag_value: int | None) -> int:
    if flag_value is not None:
        if flag_value < 1:
            raise ValueError("--threads must be at least 1")
        return flag_value
    raw = os.environ.get("WEDGEPERM_THREADS")
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"WEDGEPERM_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValueError("WEDGEPERM_THREADS must be at least 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="wedgeperm",
        description="Permutation tests for lagged effects in staggered-crossover trials.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schedule", help="print the lag-test schedule", parents=[], add_help=True)
    p.add_argument("--T", dest="n_times", type=int, required=True, help="number of periods")
    p.add_argument("--lag", type=int, required=True, help="outcome lag")
    p.add_argument("--out", help="also write the schedule as CSV (subset,time)")

    p = sub.add_parser("analyze", help="run the lag-test family on a trial CSV")
    p.add_argument("input", help="trial CSV: unit,crossover_time,y0..yT")
    p.add_argument("--lag", type=int, required=True)
    p.add_argument("--combiner", choices=COMBINERS, default="weighted_z")
    p.add_argument("--alpha", type=float, default=0.10,
                   help="two-sided level; the interval has level 1-alpha (default 0.10)")
    p.add_argument("--budget", type=int, default=499, help="Monte Carlo relabelings per test")
    p.add_argument("--statistic", choices=("diff_in_means", "rank_sum"), default="diff_in_means")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="default 12345")
    p.add_argument("--grid", nargs=3, type=float, metavar=("LO", "HI", "STEP"),
                   help="interval search grid; omitted = auto around the point estimate")
    p.add_argument("--out", help="write per-test results CSV here")
    p.add_argument("--ci-out", dest="ci_output", help="write the interval CSV here")

    p = sub.add_parser("simulate", help="run a power/size or coverage study")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=sorted(PRESETS), help="bundled study settings")
    src.add_argument("--config", dest="config_path", help="study config JSON")
    p.add_argument("--replicates", type=int, help="override the config's replicate count")
    p.add_argument("--full-scale", action="store_true",
                   help="full-scale settings: 1000 replicates, 1000 relabelings")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed (config default 12345)")
    p.add_argument("--threads", type=int, help="worker processes (or WEDGEPERM_THREADS)")
    p.add_argument("--out", help="output CSV (default <study>.csv)")

    p = sub.add_parser("validate", help="check a finite scenario against the theory")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", help="scenario JSON file")
    src.add_argument("--name", dest="scenario_name", choices=BUNDLED_SCENARIOS,
                     help="bundled scenario")
    p.add_argument("--draws", type=int, default=100_000,
                   help="Monte Carlo draws when the space is too large for exact mode")
    return parser


def _config_from_args(args: argparse.Namespace) -> CliConfig:
    grid = getattr(args, "grid", None)
    return CliConfig(
        command=args.command,
        input=getattr(args, "input", None),
        output=getattr(args, "out", None),
        ci_output=getattr(args, "ci_output", None),
        n_times=getattr(args, "n_times", 0),
        lag=getattr(args, "lag", 0),
        alpha=getattr(args, "alpha", 0.10),
        combiner=getattr(args, "combiner", "weighted_z"),
        budget=getattr(args, "budget", 499),
        statistic=getattr(args, "statistic", "diff_in_means"),
        seed=getattr(args, "seed", DEFAULT_SEED),
        preset=getattr(args, "preset", None),
        config_path=getattr(args, "config_path", None),
        replicates=getattr(args, "replicates", None),
        full_scale=getattr(args, "full_scale", False),
        threads=_threads_from_env(getattr(args, "threads", None)),
        grid=None if grid is None else tuple(grid),
        scenario=getattr(args, "scenario", None),
        scenario_name=getattr(args, "scenario_name", None),
        draws=getattr(args, "draws", 100_000),
    )


def cmd_schedule(cfg: CliConfig) -> int:
    schedule = build_schedule(cfg.n_times, cfg.lag)  # ValueError -> usage
    for subset in schedule.subsets:
        print(",".join(str(t) for t in subset))
    if cfg.output:
        with open(cfg.output, "w") as fh:
            fh.write("subset,time\n")
            for j, subset in enumerate(schedule.subsets, start=1):
                for t in subset:
                    fh.write(f"{j},{t}\n")
    return EXIT_OK


def cmd_analyze(cfg: CliConfig) -> int:
    data = read_trial_csv(cfg.input)
    tcfg = TestConfig(budget=cfg.budget, statistic=cfg.statistic, seed=cfg.seed)
    result = run_mcrts(data, cfg.lag, tcfg)
    if not result.tests:
        reasons = "; ".join(f"t={s.test_time}: {s.reason}" for s in result.skipped)
        print(f"no usable tests at lag {cfg.lag} ({reasons})", file=sys.stderr)
        return EXIT_DATA

    weight_of = {}
    if cfg.combiner == "weighted_z":
        wv = weights_from_result(result)
        weight_of = dict(zip(wv.test_times, wv.weights))
    combined = combined_from_mcrt(result, cfg.combiner, "two-sided")

    print(f"lag {cfg.lag}: {len(result.tests)} tests, {len(result.skipped)} skipped")
    for t in result.tests:
        w = f"  weight={weight_of[t.test_time]:.4f}" if t.test_time in weight_of else ""
        print(
            f"  t={t.test_time} outcome@{t.outcome_time}: "
            f"n1={t.n_treated} n0={t.n_control} "
            f"p_less={t.result.p_less:.4f} p_greater={t.result.p_greater:.4f}{w}"
        )
    for s in result.skipped:
        print(f"  t={s.test_time}: skipped ({s.reason})")
    print(f"combined ({cfg.combiner}, two-sided): p = {combined.p_value:.4g}")

    ci_cfg = CIConfig(alpha=cfg.alpha, grid=cfg.grid, test=tcfg)
    try:
        interval = invert_combined(data, cfg.lag, ci_cfg, method=cfg.combiner)
    except GridBracketError as exc:
        print(f"interval search failed: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(
        f"{100 * (1 - cfg.alpha):g}% interval for the lag-{cfg.lag} effect: "
        f"[{interval.lower:.6g}, {interval.upper:.6g}]"
    )

    if cfg.output:
        with open(cfg.output, "w") as fh:
            fh.write("test_time,outcome_time,n_treated,n_control,statistic,p_less,p_greater,weight\n")
            for t in result.tests:
                w = repr(float(weight_of[t.test_time])) if t.test_time in weight_of else ""
                fh.write(
                    f"{t.test_time},{t.outcome_time},{t.n_treated},{t.n_control},"
                    f"{t.result.statistic!r},{t.result.p_less!r},{t.result.p_greater!r},{w}\n"
                )
    if cfg.ci_output:
        write_ci_csv(cfg.ci_output, [interval])
    return EXIT_OK


def _load_study_config(cfg: CliConfig) -> dict:
    if cfg.preset:
        doc = dict(PRESETS[cfg.preset])
    else:
        with open(cfg.config_path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{cfg.config_path}: not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise DataFormatError(f"{cfg.config_path}: expected a JSON object")
    study = doc.get("study")
    if study not in ("power", "coverage"):
        raise ValueError(f"config key 'study' must be 'power' or 'coverage', got {study!r}")
    allowed = _POWER_KEYS if study == "power" else _COVERAGE_KEYS
    for key in doc:
        if key not in allowed:
            raise ValueError(f"unknown config key {key!r} for a {study} study")
    if cfg.full_scale:
        doc["replicates"] = 1000
        doc["budget"] = 1000
    if cfg.replicates is not None:
        doc["replicates"] = cfg.replicates
    doc.setdefault("seed", DEFAULT_SEED)
    if cfg.seed is not None:
        doc["seed"] = cfg.seed
    return doc


def cmd_simulate(cfg: CliConfig) -> int:
    doc = _load_study_config(cfg)
    study = doc["study"]
    out = cfg.output or f"{study}.csv"
    if study == "power":
        grid = doc.get("grid")
        if not isinstance(grid, list) or not grid:
            raise ValueError("config key 'grid' must be a non-empty list of [N, T, lag, effect] cells")
        rows: list = []
        skipped: list = []
        total = len(grid)
        for i, cell in enumerate(grid, start=1):
            print(f"power study: cell {i}/{total} {cell}", file=sys.stderr)
            part = power_study(
                [tuple(cell)],
                replicates=doc.get("replicates", 300),
                budget=doc.get("budget", 499),
                alpha=doc.get("alpha", 0.05),
                methods=tuple(doc.get("methods", POWER_METHODS)),
                seed=doc["seed"],
                statistic=doc.get("statistic", "diff_in_means"),
                threads=cfg.threads,
            )
            rows.extend(part.rows)
            skipped.extend(part.skipped)
            for cell_repr, reason in part.skipped:
                print(f"  skipped {cell_repr}: {reason}", file=sys.stderr)
        result = StudyResult("power", tuple(rows), tuple(skipped))
    else:
        n_times = doc.get("n_times", 8)
        base_taus = Sim2Config().taus
        taus = tuple(doc["taus"]) if "taus" in doc else (
            base_taus + (0.0,) * max(0, n_times - len(base_taus))
        )[:n_times]
        sim_cfg = Sim2Config(
            n_units=doc.get("n_units", 200),
            n_times=n_times,
            taus=taus,
            interaction=doc.get("interaction", 0),
            replicates=doc.get("replicates", 300),
            seed=doc["seed"],
            level=doc.get("level", 0.90),
        )
        lags = tuple(doc.get("lags", (0, 1, 2, 3, 4)))
        print(
            f"coverage study: N={sim_cfg.n_units} T={sim_cfg.n_times} "
            f"interaction={sim_cfg.interaction} replicates={sim_cfg.replicates} lags={lags}",
            file=sys.stderr,
        )
        result = coverage_study(
            sim_cfg,
            methods=tuple(doc.get("methods", ("weighted_z",))),
            lags=lags,
            budget=doc.get("budget", 499),
            statistic=doc.get("statistic", "diff_in_means"),
            threads=cfg.threads,
        )
    emit_tables(result, out)
    print(f"wrote {out} ({len(result.rows)} rows)", file=sys.stderr)
    return EXIT_OK


def cmd_validate(cfg: CliConfig) -> int:
    if cfg.scenario_name:
        scenario = bundled_scenario(cfg.scenario_name)
    else:
        scenario = load_scenario(cfg.scenario)
    space, family = scenario.space, scenario.family
    print(
        f"scenario: {scenario.name} ({space.size} elements, "
        f"{family.n_partitions} partitions, {'exact' if space.exact else 'float'} probabilities)"
    )
    failed = False

    for k in range(family.n_partitions):
        check = is_partition(space, list(family.cells(k).values()))
        if not check.ok:
            failed = True
            print(f"partition {k}: {_pass(False)} ({check.reason}, element {check.witness})")
        else:
            print(f"partition {k}: {_pass(True)} ({len(family.cells(k))} cells)")

    nested_failures = all_pairs_nested(family)
    if nested_failures:
        failed = True
        for f in nested_failures:
            print(
                f"nestedness {f.j},{f.k}: {_pass(False)} — cells {f.witness[0]!r} and "
                f"{f.witness[1]!r} overlap without containment"
            )
    else:
        print(f"nestedness: {_pass(True)} (all pairs)")

    try:
        diagram = build_hasse(family)
        print(f"hasse diagram: {_pass(True)} ({diagram.n_nodes} nodes, {len(diagram.roots)} roots)")
    except NestednessError as exc:
        failed = True
        print(f"hasse diagram: {_pass(False)} ({exc})")

    report = scenario.run(n_draws=cfg.draws)
    for r in report.cond_indep:
        if not r.ok:
            failed = True
        print(f"conditional independence {r.j},{r.k}: {_pass(r.ok)} (max TV gap {r.max_gap:.3g})")

    bad_rows = [r for r in report.rows if not r.holds]
    bad_cells = [r for r in report.cell_rows if not r.holds]
    mode = "exact" if report.exact else f"monte carlo ({report.n_draws} draws)"
    print(
        f"joint dominance ({mode}): {_pass(not bad_rows and not bad_cells)} "
        f"({len(report.rows)} level vectors, {len(report.cell_rows)} conditional rows)"
    )
    for r in bad_rows:
        failed = True
        print(f"  marginal violation at levels {tuple(map(float, r.alphas))}: "
              f"probability {float(r.probability):.6g} > bound {float(r.bound):.6g}")
    for r in bad_cells:
        failed = True
        print(f"  conditional violation at levels {tuple(map(float, r.alphas))} "
              f"in cell {sorted(r.cell)}: {float(r.probability):.6g} > {float(r.bound):.6g}")

    print("overall:", _pass(not failed))
    return EXIT_CHECK if failed else EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _config_from_args(args)
        if cfg.command == "schedule":
            return cmd_schedule(cfg)
        if cfg.command == "analyze":
            return cmd_analyze(cfg)
        if cfg.command == "simulate":
            return cmd_simulate(cfg)
        if cfg.command == "validate":
            return cmd_validate(cfg)
        parser.error(f"unknown command {cfg.command!r}")
    except DataFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, NotImplementedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
