"""Permutation tests for lagged treatment effects in staggered-crossover trials.

Units cross from control to treatment at randomized times, one group
per period.  This package schedules mutually compatible conditional
permutation tests for the effect a fixed number of periods after
crossover, combines their p-values (precision-weighted inverse-normal,
Fisher, or Bonferroni), inverts the family into confidence intervals,
and verifies the underlying joint-validity theory exactly on small
enumerable spaces.  A CLI (``wedgeperm``) fronts the same operations.
"""

from .rng import DEFAULT_SEED, generator, seed_sequence
from .design import (
    AssignmentMatrix,
    AssignmentViolation,
    CrossoverTimes,
    DataFormatError,
    DesignSpec,
    crossover_times,
    enumerate_crossover_vectors,
    matrix_from_times,
    read_assignment_csv,
    sample_assignment,
    space_size,
    step_conditional_prob,
    validate_assignment,
    write_assignment_csv,
)
from .permtest import (
    DEFAULT_BUDGET,
    DEFAULT_EXACT_THRESHOLD,
    STATISTICS,
    PermutationResult,
    RelabelPlan,
    TwoGroupSample,
    diff_in_means,
    permutation_pvalue,
    rank_sum,
    relabel_plan,
)
from .mcrt import (
    LagSchedule,
    LagTestGroup,
    McrtResult,
    McrtSkip,
    McrtTest,
    TestConfig,
    TrialData,
    build_groups,
    build_schedule,
    imputable_units,
    read_trial_csv,
    run_groups,
    run_mcrts,
    write_trial_csv,
)
from .combine import (
    COMBINERS,
    CombinedPValue,
    WeightVector,
    bonferroni_combine,
    combined_from_mcrt,
    combined_from_tests,
    estimate_lambda,
    fisher_combine,
    weighted_z_combine,
    weights_from_result,
)
from .ci import (
    CIConfig,
    ConfidenceInterval,
    GridBracketError,
    invert_combined,
    invert_single,
    read_ci_csv,
    shift_outcomes,
    tail_pvalues,
    write_ci_csv,
)
from .validate import (
    BUNDLED_SCENARIOS,
    CondIndepResult,
    DominanceReport,
    DominanceRow,
    FiniteAssignmentSpace,
    HasseDiagram,
    HasseNode,
    NestedCheck,
    NestednessError,
    PartitionCheck,
    PartitionFamily,
    PotentialOutcomeTable,
    Scenario,
    all_pairs_nested,
    build_hasse,
    bundled_scenario,
    coarsening,
    cond_indep_check,
    conditional_pvalues,
    is_partition,
    joint_dominance_check,
    load_scenario,
    pairwise_nested_check,
    refinement,
    save_scenario,
    stepped_wedge_scenario,
)
from .sim import (
    POWER_METHODS,
    CoverageRow,
    PowerRow,
    Sim1Config,
    Sim2Config,
    StudyResult,
    coverage_study,
    default_counts,
    emit_tables,
    gen_outcomes_sim1,
    gen_outcomes_sim2,
    interaction_f,
    parse_tables,
    power_study,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_SEED",
    "generator",
    "seed_sequence",
    # design
    "AssignmentMatrix",
    "AssignmentViolation",
    "CrossoverTimes",
    "DataFormatError",
    "DesignSpec",
    "crossover_times",
    "enumerate_crossover_vectors",
    "matrix_from_times",
    "read_assignment_csv",
    "sample_assignment",
    "space_size",
    "step_conditional_prob",
    "validate_assignment",
    "write_assignment_csv",
    # permtest
    "DEFAULT_BUDGET",
    "DEFAULT_EXACT_THRESHOLD",
    "STATISTICS",
    "PermutationResult",
    "RelabelPlan",
    "TwoGroupSample",
    "diff_in_means",
    "permutation_pvalue",
    "rank_sum",
    "relabel_plan",
    # mcrt
    "LagSchedule",
    "LagTestGroup",
    "McrtResult",
    "McrtSkip",
    "McrtTest",
    "TestConfig",
    "TrialData",
    "build_groups",
    "build_schedule",
    "imputable_units",
    "read_trial_csv",
    "run_groups",
    "run_mcrts",
    "write_trial_csv",
    # combine
    "COMBINERS",
    "CombinedPValue",
    "WeightVector",
    "bonferroni_combine",
    "combined_from_mcrt",
    "combined_from_tests",
    "estimate_lambda",
    "fisher_combine",
    "weighted_z_combine",
    "weights_from_result",
    # ci
    "CIConfig",
    "ConfidenceInterval",
    "GridBracketError",
    "invert_combined",
    "invert_single",
    "read_ci_csv",
    "shift_outcomes",
    "tail_pvalues",
    "write_ci_csv",
    # validate
    "BUNDLED_SCENARIOS",
    "CondIndepResult",
    "DominanceReport",
    "DominanceRow",
    "FiniteAssignmentSpace",
    "HasseDiagram",
    "HasseNode",
    "NestedCheck",
    "NestednessError",
    "PartitionCheck",
    "PartitionFamily",
    "PotentialOutcomeTable",
    "Scenario",
    "all_pairs_nested",
    "build_hasse",
    "bundled_scenario",
    "coarsening",
    "cond_indep_check",
    "conditional_pvalues",
    "is_partition",
    "joint_dominance_check",
    "load_scenario",
    "pairwise_nested_check",
    "refinement",
    "save_scenario",
    "stepped_wedge_scenario",
    # sim
    "POWER_METHODS",
    "CoverageRow",
    "PowerRow",
    "Sim1Config",
    "Sim2Config",
    "StudyResult",
    "coverage_study",
    "default_counts",
    "emit_tables",
    "gen_outcomes_sim1",
    "gen_outcomes_sim2",
    "interaction_f",
    "parse_tables",
    "power_study",
    "__version__",
]
