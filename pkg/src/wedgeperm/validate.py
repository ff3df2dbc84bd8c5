"""Executable verification of joint test validity on tiny finite spaces.

Everything here enumerates: the assignment space is a finite list of
tokens with known positive probabilities, partitions are label vectors
over that list, and p-values are computed by exact conditional counting
inside each cell.  With rational probabilities the arithmetic runs in
`fractions.Fraction`, so the dominance bound and the independence gaps
are decided exactly rather than within a tolerance.

The checks mirror the structural theory behind multiple conditional
randomization tests:

* pairwise nestedness of the conditioning partitions,
* a Hasse (covering) diagram of the union of all cells, with its
  partition/index-bookkeeping invariants asserted during construction,
* conditional independence of statistics inside refinement cells,
* the joint dominance bound  P{all K p-values <= alpha_k} <= prod alpha_k,
  marginally and conditionally on each coarsening cell.

Spaces are expected to stay tiny (hundreds of elements); an exact cap
and a Monte Carlo fallback guard the joint probability when someone
feeds in something larger.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np

from .design import DataFormatError, DesignSpec, enumerate_crossover_vectors
from .mcrt import build_schedule
from .rng import generator

__all__ = [
    "NestednessError",
    "FiniteAssignmentSpace",
    "PartitionFamily",
    "PotentialOutcomeTable",
    "PartitionCheck",
    "NestedCheck",
    "CondIndepResult",
    "DominanceRow",
    "DominanceReport",
    "HasseNode",
    "HasseDiagram",
    "is_partition",
    "pairwise_nested_check",
    "all_pairs_nested",
    "refinement",
    "coarsening",
    "build_hasse",
    "conditional_pvalues",
    "joint_dominance_check",
    "cond_indep_check",
    "Scenario",
    "stepped_wedge_scenario",
    "bundled_scenario",
    "BUNDLED_SCENARIOS",
    "load_scenario",
    "save_scenario",
]

EXACT_SPACE_CAP = 1_000_000
FLOAT_INDEP_TOL = 1e-12


class NestednessError(ValueError):
    """Two conditioning partitions have overlapping, non-nested cells."""

    def __init__(self, j: int, k: int, label_j, label_k):
        super().__init__(
            f"partitions {j} and {k} are not nested: cells {label_j!r} and "
            f"{label_k!r} overlap without containment"
        )
        self.j, self.k = j, k
        self.label_j, self.label_k = label_j, label_k


def _as_probability(value) -> Fraction | float:
    """Parse one probability: Fraction/int stay exact, 'p/q' strings
    become exact, floats stay floats (inexact mode)."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ValueError("probabilities must be numeric, not boolean")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value)
    if isinstance(value, float):
        return value
    raise ValueError(f"cannot interpret probability {value!r}")


class FiniteAssignmentSpace:
    """An enumerated assignment space with one probability per element.

    Elements are opaque hashable tokens in a stable order.  When every
    probability is rational the space is *exact* and downstream checks
    use Fraction arithmetic throughout.
    """

    def __init__(self, elements: Sequence, probs: Sequence):
        self.elements = tuple(elements)
        if not self.elements:
            raise ValueError("the space needs at least one element")
        if len(set(self.elements)) != len(self.elements):
            raise ValueError("elements must be distinct")
        parsed = [_as_probability(p) for p in probs]
        if len(parsed) != len(self.elements):
            raise ValueError("need exactly one probability per element")
        self.exact = all(isinstance(p, Fraction) for p in parsed)
        if self.exact:
            self.probs: tuple = tuple(parsed)
            total = sum(self.probs, Fraction(0))
            if any(p <= 0 for p in self.probs):
                raise ValueError("probabilities must be positive everywhere")
            if total != 1:
                raise ValueError(f"probabilities sum to {total}, expected 1")
        else:
            vals = tuple(float(p) for p in parsed)
            if any(not math.isfinite(v) or v <= 0 for v in vals):
                raise ValueError("probabilities must be positive and finite")
            if abs(sum(vals) - 1.0) > 1e-9:
                raise ValueError("probabilities must sum to 1 within 1e-9")
            self.probs = vals
        self._index = {token: i for i, token in enumerate(self.elements)}

    @classmethod
    def uniform(cls, elements: Sequence) -> "FiniteAssignmentSpace":
        n = len(tuple(elements))
        return cls(elements, [Fraction(1, n)] * n)

    @property
    def size(self) -> int:
        return len(self.elements)

    def index(self, token) -> int:
        return self._index[token]

    def prob_of(self, indices) -> Fraction | float:
        zero = Fraction(0) if self.exact else 0.0
        return sum((self.probs[i] for i in indices), zero)


class PartitionFamily:
    """K partitions of the same element list, one label vector each."""

    def __init__(self, labels: Sequence[Sequence]):
        self.labels = tuple(tuple(vec) for vec in labels)
        if not self.labels:
            raise ValueError("need at least one partition")
        sizes = {len(vec) for vec in self.labels}
        if len(sizes) != 1:
            raise ValueError("all label vectors must have the same length")
        self.n_elements = sizes.pop()
        if self.n_elements == 0:
            raise ValueError("label vectors must be nonempty")
        self._cells = [self._group(vec) for vec in self.labels]

    @staticmethod
    def _group(vec) -> dict:
        cells: dict = {}
        for i, lab in enumerate(vec):
            cells.setdefault(lab, []).append(i)
        return {lab: frozenset(idx) for lab, idx in cells.items()}

    @classmethod
    def from_cells(cls, cell_lists: Sequence[Sequence[Sequence[int]]], n_elements: int) -> "PartitionFamily":
        """Build from explicit cells; each inner list must partition
        range(n_elements) (checked via is_partition semantics)."""
        label_vectors = []
        for k, cells in enumerate(cell_lists):
            vec: list = [None] * n_elements
            for lab, cell in enumerate(cells):
                for i in cell:
                    if not 0 <= i < n_elements:
                        raise ValueError(f"partition {k}: element index {i} out of range")
                    if vec[i] is not None:
                        raise ValueError(f"partition {k}: element {i} appears in two cells")
                    vec[i] = lab
            missing = [i for i, lab in enumerate(vec) if lab is None]
            if missing:
                raise ValueError(f"partition {k}: element {missing[0]} is not covered")
            label_vectors.append(vec)
        return cls(label_vectors)

    @property
    def n_partitions(self) -> int:
        return len(self.labels)

    def cells(self, k: int) -> Mapping:
        return self._cells[k]

    def cell_of(self, k: int, i: int) -> frozenset:
        return self._cells[k][self.labels[k][i]]

    def all_cells(self) -> set[frozenset]:
        out: set[frozenset] = set()
        for cells in self._cells:
            out.update(cells.values())
        return out


class PotentialOutcomeTable:
    """Outcome array indexed (element, unit, time): the full schedule of
    what every unit would show under every assignment."""

    def __init__(self, outcomes):
        arr = np.asarray(outcomes, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError("outcomes must be indexed (element, unit, time)")
        if not np.isfinite(arr).all():
            raise ValueError("outcomes must be finite")
        arr = arr.copy()
        arr.flags.writeable = False
        self.outcomes = arr

    @property
    def n_elements(self) -> int:
        return self.outcomes.shape[0]

    @property
    def n_units(self) -> int:
        return self.outcomes.shape[1]

    @property
    def n_times(self) -> int:
        return self.outcomes.shape[2]


@dataclass(frozen=True)
class PartitionCheck:
    ok: bool
    witness: int | None = None
    reason: str = ""


@dataclass(frozen=True)
class NestedCheck:
    ok: bool
    j: int
    k: int
    witness: tuple | None = None  # (label_j, label_k) of the offending cells


@dataclass(frozen=True)
class CondIndepResult:
    ok: bool
    j: int
    k: int
    max_gap: float
    worst_cell: frozenset | None
    exact: bool


def is_partition(space: FiniteAssignmentSpace, cells: Sequence[Sequence[int]]) -> PartitionCheck:
    """Do the given cells partition the space?  Reports a witnessing
    element index on failure: one covered twice or one not covered."""
    cells = [frozenset(c) for c in cells]
    if not cells:
        raise ValueError("cells must be nonempty")
    seen: set[int] = set()
    for cell in cells:
        if not cell:
            return PartitionCheck(False, None, "empty cell")
        for i in cell:
            if not 0 <= i < space.size:
                return PartitionCheck(False, i, "element index out of range")
            if i in seen:
                return PartitionCheck(False, i, "element belongs to two cells")
        seen |= cell
    if len(seen) != space.size:
        missing = min(set(range(space.size)) - seen)
        return PartitionCheck(False, missing, "element not covered by any cell")
    return PartitionCheck(True)


def pairwise_nested_check(family: PartitionFamily, j: int, k: int) -> NestedCheck:
    """Every cell pair across partitions j,k must be disjoint or nested."""
    for lab_j, a in family.cells(j).items():
        for lab_k, b in family.cells(k).items():
            inter = a & b
            if inter and inter != a and inter != b:
                return NestedCheck(False, j, k, (lab_j, lab_k))
    return NestedCheck(True, j, k)


def all_pairs_nested(family: PartitionFamily) -> list[NestedCheck]:
    """Failing pair checks; empty means the family is fully nested."""
    out = []
    K = family.n_partitions
    for j in range(K):
        for k in range(j + 1, K):
            res = pairwise_nested_check(family, j, k)
            if not res.ok:
                out.append(res)
    return out


def _assert_within_union(family: PartitionFamily, produced: Sequence[frozenset], what: str) -> None:
    union = family.all_cells()
    for cell in produced:
        if cell not in union:
            raise AssertionError(
                f"{what} produced a cell outside the family union on a nested "
                f"family; this indicates an internal error"
            )


def refinement(family: PartitionFamily, subset: Sequence[int]) -> list[frozenset]:
    """Per-element intersection of the chosen partitions' cells.

    Always a partition; on a fully nested family every output cell is
    one of the family's own cells, which is asserted.
    """
    subset = list(subset)
    if not subset:
        raise ValueError("subset must be nonempty")
    out: list[frozenset] = []
    seen: set[frozenset] = set()
    for i in range(family.n_elements):
        cell = family.cell_of(subset[0], i)
        for k in subset[1:]:
            cell = cell & family.cell_of(k, i)
        if cell not in seen:
            seen.add(cell)
            out.append(cell)
    if not all_pairs_nested(family):
        _assert_within_union(family, out, "refinement")
    return out


def coarsening(family: PartitionFamily, subset: Sequence[int]) -> list[frozenset]:
    """Per-element union of the chosen partitions' cells, deduplicated.

    On a non-nested family the result may fail to be a partition;
    is_partition will flag the overlap.
    """
    subset = list(subset)
    if not subset:
        raise ValueError("subset must be nonempty")
    out: list[frozenset] = []
    seen: set[frozenset] = set()
    for i in range(family.n_elements):
        cell = family.cell_of(subset[0], i)
        for k in subset[1:]:
            cell = cell | family.cell_of(k, i)
        if cell not in seen:
            seen.add(cell)
            out.append(cell)
    if not all_pairs_nested(family):
        _assert_within_union(family, out, "coarsening")
    return out


@dataclass(frozen=True)
class HasseNode:
    cell: frozenset
    owners: frozenset  # partition indices whose cell this is
    parent: int | None
    children: tuple[int, ...]
    ancestors: frozenset
    descendants: frozenset


class HasseDiagram:
    """Covering-relation forest of the distinct cells of a nested family.

    Under pairwise nestedness the strict supersets of any cell form a
    chain, so every node has at most one parent and the diagram is a
    forest.  Construction re-derives and asserts the structural
    bookkeeping facts: children partition their parent, and for every
    node the partition indices split exactly into those owning an
    ancestor, the node itself, and a descendant.
    """

    def __init__(self, nodes: Sequence[HasseNode], roots: Sequence[int]):
        self.nodes = tuple(nodes)
        self.roots = tuple(roots)
        self._by_cell = {n.cell: i for i, n in enumerate(self.nodes)}

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def node_for(self, cell) -> HasseNode:
        return self.nodes[self._by_cell[frozenset(cell)]]

    def canonical_form(self, elements: Sequence) -> frozenset:
        """Relabeling/reordering-invariant fingerprint: each node as its
        token set, its parent's token set, and its owner indices."""

        def tokens(cell: frozenset) -> frozenset:
            return frozenset(elements[i] for i in cell)

        out = set()
        for n in self.nodes:
            parent = None if n.parent is None else tokens(self.nodes[n.parent].cell)
            out.add((tokens(n.cell), parent, n.owners))
        return frozenset(out)


def build_hasse(family: PartitionFamily) -> HasseDiagram:
    """Build the covering diagram, verifying nestedness first."""
    failures = all_pairs_nested(family)
    if failures:
        f = failures[0]
        raise NestednessError(f.j, f.k, *f.witness)

    cell_owners: dict[frozenset, set[int]] = {}
    for k in range(family.n_partitions):
        for cell in family.cells(k).values():
            cell_owners.setdefault(cell, set()).add(k)
    # stable order: big cells first, ties broken by members
    cells = sorted(cell_owners, key=lambda c: (-len(c), sorted(c)))
    index = {cell: i for i, cell in enumerate(cells)}

    parents: list[int | None] = [None] * len(cells)
    for i, cell in enumerate(cells):
        supersets = [d for d in cells if len(d) > len(cell) and cell < d]
        if supersets:
            parents[i] = index[min(supersets, key=len)]

    children: list[list[int]] = [[] for _ in cells]
    for i, p in enumerate(parents):
        if p is not None:
            children[p].append(i)

    ancestors: list[set[int]] = [set() for _ in cells]
    for i in range(len(cells)):  # parents precede children in size order
        p = parents[i]
        if p is not None:
            ancestors[i] = ancestors[p] | {p}
    descendants: list[set[int]] = [set() for _ in cells]
    for i in range(len(cells) - 1, -1, -1):
        for c in children[i]:
            descendants[i] |= descendants[c] | {c}

    K = family.n_partitions
    nodes = []
    for i, cell in enumerate(cells):
        owners = frozenset(cell_owners[cell])
        k_an = frozenset().union(*(cell_owners[cells[a]] for a in ancestors[i])) if ancestors[i] else frozenset()
        k_de = frozenset().union(*(cell_owners[cells[d]] for d in descendants[i])) if descendants[i] else frozenset()
        groups = [k_an, owners, k_de]
        if sum(len(g) for g in groups) != K or frozenset().union(*groups) != frozenset(range(K)):
            raise AssertionError(
                f"node {sorted(cell)}: ancestor/self/descendant partition indices "
                f"{[sorted(g) for g in groups]} do not split the {K} partitions"
            )
        if children[i]:
            kids = [cells[c] for c in children[i]]
            covered: set[int] = set()
            for kid in kids:
                if covered & kid:
                    raise AssertionError(f"children of node {sorted(cell)} overlap")
                covered |= kid
            if covered != set(cell):
                raise AssertionError(f"children of node {sorted(cell)} do not cover it")
        nodes.append(
            HasseNode(
                cell=cell,
                owners=owners,
                parent=parents[i],
                children=tuple(children[i]),
                ancestors=frozenset(ancestors[i]),
                descendants=frozenset(descendants[i]),
            )
        )

    for i, node in enumerate(nodes):
        k_an_self = frozenset().union(*(nodes[a].owners for a in node.ancestors)) if node.ancestors else frozenset()
        for c in node.children:
            child = nodes[c]
            k_an_child = frozenset().union(*(nodes[a].owners for a in child.ancestors))
            if k_an_child != k_an_self | node.owners:
                raise AssertionError(
                    f"child {sorted(child.cell)}: ancestor partition indices "
                    f"{sorted(k_an_child)} differ from parent's ancestors plus "
                    f"parent {sorted(k_an_self | node.owners)}"
                )

    roots = [i for i, p in enumerate(parents) if p is None]
    return HasseDiagram(nodes, roots)


def _statistic_values(space: FiniteAssignmentSpace, table: PotentialOutcomeTable | None, stat) -> np.ndarray:
    """Normalize one statistic to a value per element.

    A callable is invoked as stat(element_token, outcome_matrix) with
    the (unit, time) outcome slice for that element; anything else is
    taken as a precomputed value vector.
    """
    if callable(stat):
        if table is None:
            raise ValueError("callable statistics need an outcome table")
        if table.n_elements != space.size:
            raise ValueError("outcome table and space disagree on the number of elements")
        vals = np.asarray(
            [stat(space.elements[i], table.outcomes[i]) for i in range(space.size)],
            dtype=np.float64,
        )
    else:
        vals = np.asarray(stat, dtype=np.float64)
        if vals.shape != (space.size,):
            raise ValueError("statistic vector must have one value per element")
    if not np.isfinite(vals).all():
        raise ValueError("statistic values must be finite")
    return vals


def conditional_pvalues(space: FiniteAssignmentSpace, cells: Sequence[frozenset], values: np.ndarray) -> list:
    """Exact upper-tail conditional p-value for every element.

    Within its cell, an element's p-value is the conditional probability
    of a statistic value >= its own.  Exact spaces give Fractions.
    """
    pvals: list = [None] * space.size
    for cell in cells:
        members = sorted(cell, key=lambda i: -values[i])
        total = space.prob_of(cell)
        running = Fraction(0) if space.exact else 0.0
        pos = 0
        while pos < len(members):
            tie_end = pos
            while tie_end < len(members) and values[members[tie_end]] == values[members[pos]]:
                tie_end += 1
            for i in members[pos:tie_end]:
                running += space.probs[i]
            p = running / total
            for i in members[pos:tie_end]:
                pvals[i] = p
            pos = tie_end
    return pvals


@dataclass(frozen=True)
class DominanceRow:
    alphas: tuple
    probability: Fraction | float
    bound: Fraction | float
    holds: bool
    stderr: float | None = None
    cell: frozenset | None = None  # None marks the marginal row


@dataclass(frozen=True)
class DominanceReport:
    exact: bool
    conditions_ok: bool
    nested_failures: tuple[NestedCheck, ...]
    cond_indep: tuple[CondIndepResult, ...]
    rows: tuple[DominanceRow, ...]
    cell_rows: tuple[DominanceRow, ...]
    n_draws: int | None = None

    @property
    def bound_ok(self) -> bool:
        return all(r.holds for r in self.rows) and all(r.holds for r in self.cell_rows)

    @property
    def ok(self) -> bool:
        return self.conditions_ok and self.bound_ok


def _as_alpha(a) -> Fraction:
    """Levels become exact rationals; decimal strings and floats go
    through their decimal representation, so 0.1 means 1/10."""
    if isinstance(a, Fraction):
        return a
    if isinstance(a, int):
        return Fraction(a)
    if isinstance(a, float):
        return Fraction(str(a))
    if isinstance(a, str):
        return Fraction(a)
    raise ValueError(f"cannot interpret level {a!r}")


def joint_dominance_check(
    space: FiniteAssignmentSpace,
    family: PartitionFamily,
    table: PotentialOutcomeTable | None,
    stats: Sequence,
    alphas: Sequence[Sequence],
    n_draws: int = 100_000,
    seed=None,
) -> DominanceReport:
    """Does P{all K p-values <= alpha_k} stay below prod(alpha_k)?

    Computes every test's conditional p-value exactly by enumeration
    inside its cell, then evaluates the joint probability under the
    assignment distribution — exactly on small exact spaces, by Monte
    Carlo (with a reported standard error) otherwise.  The conditional
    version given each coarsening cell is evaluated too.  Nestedness
    and pairwise conditional independence are checked first and the
    report carries their status regardless of the bound's outcome.
    """
    K = family.n_partitions
    if family.n_elements != space.size:
        raise ValueError("family and space disagree on the number of elements")
    if len(stats) != K:
        raise ValueError(f"need one statistic per partition ({K}), got {len(stats)}")
    values = [_statistic_values(space, table, s) for s in stats]

    nested_failures = tuple(all_pairs_nested(family))
    indep = tuple(
        cond_indep_check(space, family, table, stats, j, k)
        for j in range(K)
        for k in range(j + 1, K)
    )
    conditions_ok = not nested_failures and all(r.ok for r in indep)

    pvals = [
        conditional_pvalues(space, list(family.cells(k).values()), values[k])
        for k in range(K)
    ]
    alpha_rows = [tuple(_as_alpha(a) for a in vec) for vec in alphas]
    for vec in alpha_rows:
        if len(vec) != K:
            raise ValueError(f"every level vector needs {K} entries")

    exact = space.exact and space.size <= EXACT_SPACE_CAP
    zero = Fraction(0) if space.exact else 0.0

    def hit_indicator(vec) -> list[bool]:
        return [all(pvals[k][i] <= vec[k] for k in range(K)) for i in range(space.size)]

    rows: list[DominanceRow] = []
    cell_rows: list[DominanceRow] = []
    union_cells = coarsening(family, range(K))
    draws = None
    if not exact:
        probs = np.asarray([float(p) for p in space.probs])
        gen = generator(seed if seed is not None else 0, 1)
        draws = gen.choice(space.size, size=n_draws, p=probs / probs.sum())

    for vec in alpha_rows:
        bound = math.prod(vec)
        hits = hit_indicator(vec)
        if exact:
            prob = sum((space.probs[i] for i in range(space.size) if hits[i]), zero)
            rows.append(DominanceRow(vec, prob, bound, prob <= bound))
            for cell in union_cells:
                cprob = sum((space.probs[i] for i in cell if hits[i]), zero) / space.prob_of(cell)
                cell_rows.append(DominanceRow(vec, cprob, bound, cprob <= bound, cell=cell))
        else:
            hit_arr = np.asarray(hits)[draws]
            est = float(hit_arr.mean())
            se = math.sqrt(est * (1 - est) / n_draws)
            rows.append(DominanceRow(vec, est, bound, est <= float(bound) + 3 * se, stderr=se))
            for cell in union_cells:
                in_cell = np.isin(draws, list(cell))
                n_cell = int(in_cell.sum())
                if n_cell == 0:
                    continue
                cest = float(np.asarray(hits)[draws[in_cell]].mean())
                cse = math.sqrt(cest * (1 - cest) / n_cell)
                cell_rows.append(
                    DominanceRow(vec, cest, bound, cest <= float(bound) + 3 * cse, stderr=cse, cell=cell)
                )

    return DominanceReport(
        exact=exact,
        conditions_ok=conditions_ok,
        nested_failures=nested_failures,
        cond_indep=indep,
        rows=tuple(rows),
        cell_rows=tuple(cell_rows),
        n_draws=None if exact else n_draws,
    )


def cond_indep_check(
    space: FiniteAssignmentSpace,
    family: PartitionFamily,
    table: PotentialOutcomeTable | None,
    stats: Sequence,
    j: int,
    k: int,
) -> CondIndepResult:
    """Are statistics j and k independent given the refinement cell?

    Within each cell of the pairwise refinement, the exact joint
    distribution of the two statistic values (weighted by the
    assignment probabilities) is compared against the product of its
    marginals; the result reports the largest total-variation gap.
    """
    vj = _statistic_values(space, table, stats[j])
    vk = _statistic_values(space, table, stats[k])
    cells = refinement(family, [j, k])
    zero = Fraction(0) if space.exact else 0.0
    max_gap = zero
    worst: frozenset | None = None
    for cell in cells:
        total = space.prob_of(cell)
        joint: dict = {}
        marg_j: dict = {}
        marg_k: dict = {}
        for i in cell:
            w = space.probs[i] / total
            key = (vj[i], vk[i])
            joint[key] = joint.get(key, zero) + w
            marg_j[vj[i]] = marg_j.get(vj[i], zero) + w
            marg_k[vk[i]] = marg_k.get(vk[i], zero) + w
        gap = zero
        for a, pa in marg_j.items():
            for b, pb in marg_k.items():
                gap += abs(joint.get((a, b), zero) - pa * pb)
        gap = gap / 2
        if gap > max_gap:
            max_gap, worst = gap, cell
    ok = (max_gap == 0) if space.exact else (max_gap < FLOAT_INDEP_TOL)
    return CondIndepResult(ok, j, k, float(max_gap), worst, space.exact)


# ---------------------------------------------------------------------------
# scenarios: serializable bundles of (space, partitions, outcomes, statistics)


@dataclass
class Scenario:
    """Everything one validation run needs, in file-friendly form.

    Statistics are stored as per-element value vectors so a scenario
    can round-trip through JSON; the check functions accept these
    vectors directly.
    """

    space: FiniteAssignmentSpace
    family: PartitionFamily
    table: PotentialOutcomeTable | None
    stats: list[np.ndarray]
    stat_names: list[str]
    partition_names: list[str]
    alphas: list[tuple]
    name: str = "scenario"

    def run(self, n_draws: int = 100_000) -> DominanceReport:
        return joint_dominance_check(
            self.space, self.family, self.table, self.stats, self.alphas, n_draws=n_draws
        )


def _prob_to_json(p) -> str | float:
    if isinstance(p, Fraction):
        return f"{p.numerator}/{p.denominator}"
    return float(p)


def save_scenario(path, scenario: Scenario) -> None:
    probs = [_prob_to_json(p) for p in scenario.space.probs]
    if scenario.space.exact and all(
        p == scenario.space.probs[0] for p in scenario.space.probs
    ) and scenario.space.probs[0] == Fraction(1, scenario.space.size):
        probs = "uniform"
    doc = {
        "version": 1,
        "name": scenario.name,
        "elements": [list(e) for e in scenario.space.elements],
        "probs": probs,
        "partitions": [
            {"name": name, "labels": [str(lab) for lab in vec]}
            for name, vec in zip(scenario.partition_names, scenario.family.labels)
        ],
        "outcomes": None if scenario.table is None else scenario.table.outcomes.tolist(),
        "statistics": [
            {"name": name, "values": [float(v) for v in vals]}
            for name, vals in zip(scenario.stat_names, scenario.stats)
        ],
        "alphas": [[_prob_to_json(a) for a in vec] for vec in scenario.alphas],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise DataFormatError(f"{path}: expected a JSON object at the top level")
    if doc.get("version") != 1:
        raise DataFormatError(f"{path}: unsupported version {doc.get('version')!r}")
    required = {"elements", "probs", "partitions", "statistics", "alphas"}
    missing = sorted(required - doc.keys())
    if missing:
        raise DataFormatError(f"{path}: missing keys: {', '.join(missing)}")
    try:
        elements = [tuple(e) for e in doc["elements"]]
        probs = doc["probs"]
        if probs == "uniform":
            space = FiniteAssignmentSpace.uniform(elements)
        else:
            space = FiniteAssignmentSpace(elements, probs)
        partitions = doc["partitions"]
        family = PartitionFamily([p["labels"] for p in partitions])
        partition_names = [str(p.get("name", f"partition{k}")) for k, p in enumerate(partitions)]
        table = None if doc.get("outcomes") is None else PotentialOutcomeTable(doc["outcomes"])
        stats = [np.asarray(s["values"], dtype=np.float64) for s in doc["statistics"]]
        stat_names = [str(s.get("name", f"stat{k}")) for k, s in enumerate(doc["statistics"])]
        alphas = [tuple(_as_alpha(a) for a in vec) for vec in doc["alphas"]]
    except (KeyError, TypeError) as exc:
        raise DataFormatError(f"{path}: malformed scenario: {exc!r}") from None
    for vals in stats:
        if vals.shape != (space.size,):
            raise DataFormatError(f"{path}: statistic vectors must have one value per element")
    if family.n_elements != space.size:
        raise DataFormatError(f"{path}: partition labels must have one entry per element")
    if len(stats) != family.n_partitions:
        raise DataFormatError(f"{path}: need exactly one statistic per partition")
    return Scenario(
        space=space,
        family=family,
        table=table,
        stats=stats,
        stat_names=stat_names,
        partition_names=partition_names,
        alphas=alphas,
        name=str(doc.get("name", "scenario")),
    )


def _default_alpha_grid(k: int) -> list[tuple]:
    levels = [Fraction(i, 10) for i in (1, 2, 3, 4, 5)]
    grids: list[tuple] = [()]
    for _ in range(k):
        grids = [g + (a,) for g in grids for a in levels]
    return grids


def stepped_wedge_scenario(
    n_units: int,
    counts: Sequence[int],
    lag: int,
    conditioning: str = "sequential",
    seed: int = 7,
    alphas: Sequence[Sequence] | None = None,
    name: str | None = None,
) -> Scenario:
    """Enumerated staggered-crossover space with effect-free outcomes.

    ``conditioning`` picks the partition family: "sequential" fixes the
    subset-membership map plus all crossings before the test time (the
    construction the theory validates), while "naive" groups only by
    the identity of each test's comparison pool — the shortcut that
    breaks nestedness once the outcome lag exceeds zero.

    Outcomes are i.i.d. normal draws shared across all assignments, so
    every null hypothesis holds by construction and the dominance bound
    is testable.
    """
    spec = DesignSpec(n_units, counts)
    n_times = spec.n_times
    elements = list(enumerate_crossover_vectors(spec))
    space = FiniteAssignmentSpace.uniform(elements)
    gen = generator(seed, 97)
    outcomes = gen.standard_normal((n_units, n_times))
    table = PotentialOutcomeTable(np.broadcast_to(outcomes, (space.size, n_units, n_times)))

    if conditioning == "sequential":
        schedule = build_schedule(n_times, lag)
        subset_of = {t: j for j, subset in enumerate(schedule.subsets) for t in subset}
        test_times = list(schedule.test_times())
        comparisons = []
        for t in test_times:
            j = subset_of[t]
            later = [s for s in schedule.subsets[j] if s > t]
            comparisons.append((t, set(later)))
        labels = []
        for t in test_times:
            vec = []
            for z in elements:
                membership = tuple(subset_of.get(a, -1) for a in z)
                prefix = tuple(a if a < t else 0 for a in z)
                vec.append((membership, prefix))
            labels.append(vec)
    elif conditioning == "naive":
        if lag >= n_times - 1:
            raise ValueError("naive conditioning needs lag + 1 < number of periods")
        test_times = list(range(1, n_times - lag))
        comparisons = [(t, set(range(t + lag + 1, n_times + 1))) for t in test_times]
        labels = []
        for t, control_times in comparisons:
            vec = []
            for z in elements:
                pool = tuple(i for i, a in enumerate(z) if a == t or a in control_times)
                vec.append(pool)
            labels.append(vec)
    else:
        raise ValueError(f"unknown conditioning {conditioning!r}")

    family = PartitionFamily(labels)
    stats = []
    for (t, control_times) in comparisons:
        col = t + lag - 1
        vals = []
        for z in elements:
            treated = [i for i, a in enumerate(z) if a == t]
            control = [i for i, a in enumerate(z) if a in control_times]
            if treated and control:
                v = outcomes[treated, col].mean() - outcomes[control, col].mean()
            else:
                v = 0.0
            vals.append(v)
        stats.append(np.asarray(vals))

    return Scenario(
        space=space,
        family=family,
        table=table,
        stats=stats,
        stat_names=[f"mean_gap_t{t}" for t, _ in comparisons],
        partition_names=[f"test_t{t}" for t, _ in comparisons],
        alphas=list(alphas) if alphas is not None else _default_alpha_grid(len(comparisons)),
        name=name or f"stepped-wedge-{conditioning}",
    )


BUNDLED_SCENARIOS = ("nested-lag0", "naive-lag1")


def bundled_scenario(name: str) -> Scenario:
    """Named ready-made scenarios: a tiny fully valid family and the
    classic broken one."""
    if name == "nested-lag0":
        return stepped_wedge_scenario(4, (2, 1, 1), lag=0, conditioning="sequential", name=name)
    if name == "naive-lag1":
        return stepped_wedge_scenario(4, (1, 1, 1, 1), lag=1, conditioning="naive", name=name)
    raise ValueError(f"unknown scenario {name!r}; bundled: {', '.join(BUNDLED_SCENARIOS)}")
