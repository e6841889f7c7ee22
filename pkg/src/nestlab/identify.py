"""Nest identification from boost factors and finite-sample tests.

An item's boost factor under an experiment S is its choice probability there
divided by its control probability.  Items sharing a nest always share a
boost factor; under general position, items of different nests can only
share one when both nests are fully offered, in which case it equals the
outside option's boost.  The exact algorithms turn these facts into an edge
matrix of same-nest deductions; the noisy ones replace equality checks with
two-proportion z-tests and hand a soft evidence matrix to community
detection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .communities import community_detect
from .designs import ExperimentDesign
from .model import ChoiceProbabilities, NestPartition, choice_probabilities
from .sampling import ChoiceCountTable, empirical_probabilities

EXACT_TOLERANCE = 1e-9  # relative; exact inputs only carry roundoff noise
NOISY_NULL = 2.0  # above any attainable p-value, so min() absorbs it


class ZeroEvidenceError(ValueError):
    """Raised when a z-test's pooled counts vanish on either assortment."""


def normal_cdf(z: float) -> float:
    """Standard normal CDF via erfc; good to about 1e-15 everywhere."""
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def _releq(a: float, b: float, tol: float) -> bool:
    return abs(a - b) <= tol * max(abs(a), abs(b))


@dataclass(frozen=True)
class BoostTable:
    """Boost factors for each experiment, key 0 being the outside option."""

    n: int
    outside: bool
    labels: tuple[str, ...]
    assortments: tuple[tuple[int, ...], ...]
    factors: tuple[dict[int, float], ...]

    def __post_init__(self):
        if not (len(self.labels) == len(self.assortments) == len(self.factors)):
            raise ValueError("misaligned boost table")
        for items, bf in zip(self.assortments, self.factors):
            expect = set(items) | ({0} if self.outside else set())
            if set(bf) != expect:
                raise ValueError("boost rows must cover exactly the offered items")


def boost_factors(
    control: ChoiceProbabilities, experiments: list[ChoiceProbabilities],
    labels: tuple[str, ...] | None = None,
) -> BoostTable:
    """Ratio of each experiment probability to the control probability.

    Control must be over the full item set; items (or the outside option)
    with zero control probability have no defined boost and are rejected.
    """
    n = len(control.assortment)
    if control.assortment != tuple(range(1, n + 1)):
        raise ValueError("control probabilities must cover items 1..n")
    if labels is None:
        labels = tuple(f"S{k + 1}" for k in range(len(experiments)))
    factors = []
    for cp in experiments:
        if cp.outside != control.outside:
            raise ValueError("outside-option flag differs between assortments")
        row = {}
        for i in cp.probs:
            base = control.probs[i]
            if base == 0.0:
                raise ValueError(f"zero control probability for item {i}")
            row[i] = cp.probs[i] / base
        factors.append(row)
    return BoostTable(
        n=n,
        outside=control.outside,
        labels=tuple(labels),
        assortments=tuple(cp.assortment for cp in experiments),
        factors=tuple(factors),
    )


@dataclass
class EdgeMatrix:
    """Symmetric same-nest evidence between items; diagonal is unused.

    Exact mode holds {0, 1, null}; noisy mode holds confidence weights in
    [0, 1] once finalized.  inconsistencies records contradictory exact
    deductions (impossible on clean inputs) without failing.
    """

    values: np.ndarray
    mode: str
    inconsistencies: list[tuple[int, int, float, float]] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def get(self, i: int, j: int) -> float:
        return float(self.values[i - 1, j - 1])

    def _set(self, i: int, j: int, value: float) -> None:
        old = self.values[i - 1, j - 1]
        if self.mode == "exact" and not np.isnan(old) and old != value:
            self.inconsistencies.append((i, j, float(old), value))
        self.values[i - 1, j - 1] = value
        self.values[j - 1, i - 1] = value


def _one_hop_transitivity_exact(values: np.ndarray) -> None:
    # Snapshot semantics: all (i,j) with a shared definite-1 neighbor flip at once.
    ones = values == 1.0
    shared = (ones.astype(np.int64) @ ones.astype(np.int64)) > 0
    promote = np.isnan(values) & shared
    values[promote] = 1.0


def _identify_missing_pairs_exact(values: np.ndarray) -> None:
    # A null pair with no definite-1 edge anywhere on either side must be a
    # nest that no experiment split; mark it same-nest.
    ones = values == 1.0
    has_one = ones.any(axis=1)
    promote = np.isnan(values) & ~has_one[:, None] & ~has_one[None, :]
    np.fill_diagonal(promote, False)
    values[promote] = 1.0


def _components_of_ones(values: np.ndarray) -> NestPartition:
    n = values.shape[0]
    ones = values == 1.0
    seen = np.zeros(n, dtype=bool)
    nests = []
    for start in range(n):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        group = []
        while stack:
            u = stack.pop()
            group.append(u + 1)
            for v in np.nonzero(ones[u])[0]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(int(v))
        nests.append(sorted(group))
    return NestPartition(nests)


def _finalize_exact(edges: EdgeMatrix) -> tuple[EdgeMatrix, NestPartition]:
    _one_hop_transitivity_exact(edges.values)
    _identify_missing_pairs_exact(edges.values)
    edges.values[np.isnan(edges.values)] = 0.0
    np.fill_diagonal(edges.values, 0.0)
    return edges, _components_of_ones(edges.values)


def exact_identify_with_outside(
    table: BoostTable, design: ExperimentDesign, tol: float = EXACT_TOLERANCE
) -> tuple[EdgeMatrix, NestPartition]:
    """Recover the nest partition from exact boost factors, outside option present.

    Within each experiment: distinct boosts split a pair, a shared boost
    above the outside's joins it, and items boosted like the outside option
    belong to nests inside S, so they split from everything outside S.
    One-hop transitivity and the missing-pair rule then fill what the
    experiments never directly tested.
    """
    if not table.outside:
        raise ValueError("boost table has no outside option")
    n = table.n
    edges = EdgeMatrix(values=np.full((n, n), np.nan), mode="exact")
    for items, bf in zip(table.assortments, table.factors):
        base = bf[0]
        for a, i in enumerate(items):
            for j in items[a + 1:]:
                if not _releq(bf[i], bf[j], tol):
                    edges._set(i, j, 0.0)
                elif bf[i] > base and not _releq(bf[i], base, tol):
                    edges._set(i, j, 1.0)
        offered = set(items)
        unboosted = [i for i in items if _releq(bf[i], base, tol)]
        for i in unboosted:
            for k in range(1, n + 1):
                if k not in offered:
                    edges._set(i, k, 0.0)
    return _finalize_exact(edges)


def exact_identify_without_outside(
    table: BoostTable, design: ExperimentDesign, tol: float = EXACT_TOLERANCE
) -> tuple[EdgeMatrix, NestPartition]:
    """Recover the nest partition from exact boost factors, no outside option.

    The minimum boost within an experiment stands in for the unobservable
    outside boost: anything above it behaves as before, while the minimum
    group itself is either one nest fully inside S (if its members ever
    split) or a joined group, decided per experiment against the evidence
    accumulated so far.
    """
    if table.outside:
        raise ValueError("boost table carries an outside option")
    n = table.n
    edges = EdgeMatrix(values=np.full((n, n), np.nan), mode="exact")
    for items, bf in zip(table.assortments, table.factors):
        if not items:
            continue
        low = min(bf[i] for i in items)
        for a, i in enumerate(items):
            for j in items[a + 1:]:
                if not _releq(bf[i], bf[j], tol):
                    edges._set(i, j, 0.0)
                elif bf[i] > low and not _releq(bf[i], low, tol):
                    edges._set(i, j, 1.0)
    # Second pass: the minimum-boost group of each experiment resolves against
    # everything deduced so far, in experiment order.
    for items, bf in zip(table.assortments, table.factors):
        if not items:
            continue
        low = min(bf[i] for i in items)
        group = [i for i in items if _releq(bf[i], low, tol)]
        offered = set(items)
        split = any(
            edges.get(group[a], group[c]) == 0.0
            for a in range(len(group))
            for c in range(a + 1, len(group))
        )
        if split:
            for i in group:
                for k in range(1, n + 1):
                    if k not in offered:
                        edges._set(i, k, 0.0)
        else:
            for a in range(len(group)):
                for c in range(a + 1, len(group)):
                    edges._set(group[a], group[c], 1.0)
    return _finalize_exact(edges)


def _count(table: ChoiceCountTable, row: int, item: int) -> int:
    try:
        return table.counts[row][item]
    except KeyError:
        raise ValueError(f"item {item} not offered in {table.labels[row]}") from None


def z_statistic(table: ChoiceCountTable, i: int, j: int, experiment: int) -> float:
    """Two-proportion z score for item i's share against j, experiment vs control.

    experiment indexes into the experiment list (0-based, control excluded).
    Works for per-assortment sample sizes; with equal sizes it reduces to
    the classical pooled form.  Exactly antisymmetric in (i, j): the
    numerator is cross-multiplied so swapping arguments negates the same
    float products instead of rounding two different quotients.
    """
    if i == j:
        raise ValueError("z statistic needs two distinct choices")
    row = experiment + 1
    xs_i, xs_j = _count(table, row, i), _count(table, row, j)
    xc_i, xc_j = _count(table, 0, i), _count(table, 0, j)
    if xs_i + xs_j == 0 or xc_i + xc_j == 0:
        raise ZeroEvidenceError(
            f"no observations of items {i},{j} in {table.labels[row]} or control"
        )
    m_s, m_c = table.sizes[row], table.sizes[0]
    ps_i, ps_j = xs_i / m_s, xs_j / m_s
    pc_i, pc_j = xc_i / m_c, xc_j / m_c
    numerator = (ps_i * pc_j - pc_i * ps_j) / ((ps_i + ps_j) * (pc_i + pc_j))
    if numerator == 0.0:
        return 0.0
    # grouped so the sum is evaluated identically with i and j swapped
    total = (ps_i + ps_j) + (pc_i + pc_j)
    pool_i = (ps_i + pc_i) / total
    pool_j = (ps_j + pc_j) / total
    variance = pool_i * pool_j * (1.0 / (xs_i + xs_j) + 1.0 / (xc_i + xc_j))
    return numerator / math.sqrt(variance)


def p_value_equal(table: ChoiceCountTable, i: int, j: int, experiment: int) -> float:
    """Two-sided p-value for 'items i and j saw the same boost'."""
    z = z_statistic(table, i, j, experiment)
    return math.erfc(abs(z) / math.sqrt(2.0))


def p_value_leq_outside(table: ChoiceCountTable, i: int, experiment: int) -> float:
    """One-sided p-value for 'item i's boost is at most the outside option's'."""
    z = z_statistic(table, i, 0, experiment)
    return 0.5 * math.erfc(z / math.sqrt(2.0))


@dataclass(frozen=True)
class TestConfig:
    """Finite-sample test settings.

    alpha rejects sameness, beta gates the no-boost deduction (1 - alpha by
    default).  z_threshold switches identification to the fixed-cutoff
    regime; delta and C parameterize its sample-size bound.
    """

    __test__ = False  # keep pytest from collecting this as a test class

    alpha: float = 0.05
    beta: float | None = None
    z_threshold: float | None = None
    delta: float = 0.1
    C: float = 25.0

    def __post_init__(self):
        if self.beta is None:
            object.__setattr__(self, "beta", 1.0 - self.alpha)
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")


def _safe_p_equal(table, i, j, s):
    try:
        return p_value_equal(table, i, j, s)
    except ZeroEvidenceError:
        return None


def _safe_p_leq(table, i, s):
    try:
        return p_value_leq_outside(table, i, s)
    except ZeroEvidenceError:
        return None


def _one_hop_transitivity_noisy(values: np.ndarray) -> None:
    # Only full-confidence edges (exactly 1.0) may transport membership.
    ones = values == 1.0
    shared = (ones.astype(np.int64) @ ones.astype(np.int64)) > 0
    promote = (values != 0.0) & shared
    np.fill_diagonal(promote, False)
    values[promote] = 1.0


def noisy_identify_with_outside(
    table: ChoiceCountTable, design: ExperimentDesign, config: TestConfig | None = None
) -> tuple[EdgeMatrix, NestPartition]:
    """Estimate the nest partition from finite-sample counts, outside option present.

    Pairwise equality tests at level alpha harden edges to 0; confidently
    boosted equal pairs count as full evidence; everything else keeps the
    smallest p-value seen as a soft weight.  Items confidently unboosted
    discount their edges to items outside the experiment.  With alpha = 1
    every pair is rejected; with alpha = 0 nothing is and the matrix stays
    purely soft.
    """
    if config is None:
        config = TestConfig()
    if config.z_threshold is not None:
        return _threshold_identify(table, design, config.z_threshold, outside=True)
    if not table.outside:
        raise ValueError("count table has no outside option")
    n = table.n
    values = np.full((n, n), NOISY_NULL)
    edges = EdgeMatrix(values=values, mode="noisy")
    for s, items in enumerate(table.assortments[1:]):
        for a, i in enumerate(items):
            for j in items[a + 1:]:
                p_eq = _safe_p_equal(table, i, j, s)
                if p_eq is None:
                    continue
                if p_eq <= config.alpha:
                    edges._set(i, j, 0.0)
                    continue
                p_i = _safe_p_leq(table, i, s)
                p_j = _safe_p_leq(table, j, s)
                if p_i is not None and p_j is not None and max(p_i, p_j) <= config.alpha:
                    edges._set(i, j, min(1.0, edges.get(i, j)))
                else:
                    edges._set(i, j, min(p_eq, edges.get(i, j)))
        offered = set(items)
        for i in items:
            p_i = _safe_p_leq(table, i, s)
            if p_i is None or p_i <= config.beta:
                continue
            confidence = 1.0 - p_i
            for k in range(1, n + 1):
                if k not in offered:
                    edges._set(i, k, min(confidence, edges.get(i, k)))
    _one_hop_transitivity_noisy(values)
    values[values == NOISY_NULL] = 0.0
    np.fill_diagonal(values, 0.0)
    return edges, community_detect(values)


def noisy_identify_without_outside(
    table: ChoiceCountTable, design: ExperimentDesign, config: TestConfig | None = None
) -> tuple[EdgeMatrix, NestPartition]:
    """Estimate the nest partition from finite-sample counts, no outside option.

    Without an outside reference only pairwise equality is testable: rejected
    pairs harden to 0 and surviving pairs keep their smallest p-value as soft
    same-nest evidence for community detection.
    """
    if config is None:
        config = TestConfig()
    if config.z_threshold is not None:
        return _threshold_identify(table, design, config.z_threshold, outside=False)
    if table.outside:
        raise ValueError("count table carries an outside option")
    n = table.n
    values = np.full((n, n), NOISY_NULL)
    edges = EdgeMatrix(values=values, mode="noisy")
    for s, items in enumerate(table.assortments[1:]):
        for a, i in enumerate(items):
            for j in items[a + 1:]:
                p_eq = _safe_p_equal(table, i, j, s)
                if p_eq is None:
                    continue
                if p_eq <= config.alpha:
                    edges._set(i, j, 0.0)
                else:
                    edges._set(i, j, min(p_eq, edges.get(i, j)))
    values[values == NOISY_NULL] = 0.0
    np.fill_diagonal(values, 0.0)
    return edges, community_detect(values)


def _safe_z(table, i, j, s):
    try:
        return z_statistic(table, i, j, s)
    except ZeroEvidenceError:
        return None


def _threshold_identify(
    table: ChoiceCountTable, design: ExperimentDesign, threshold: float, outside: bool
) -> tuple[EdgeMatrix, NestPartition]:
    """Exact-algorithm structure with |z| <= threshold standing in for equality.

    In the large-sample regime the cutoff classifies every boost comparison
    correctly, so the deduction rules of the exact algorithms apply verbatim.
    """
    if outside != table.outside:
        raise ValueError("outside-option flag does not match the count table")
    n = table.n
    edges = EdgeMatrix(values=np.full((n, n), np.nan), mode="exact")
    for s, items in enumerate(table.assortments[1:]):
        offered = set(items)
        if outside:
            boosted: dict[int, bool | None] = {}
            for i in items:
                z = _safe_z(table, i, 0, s)
                boosted[i] = None if z is None else abs(z) > threshold
            for a, i in enumerate(items):
                for j in items[a + 1:]:
                    z = _safe_z(table, i, j, s)
                    if z is None:
                        continue
                    if abs(z) > threshold:
                        edges._set(i, j, 0.0)
                    elif boosted[i] and boosted[j]:
                        edges._set(i, j, 1.0)
            for i in items:
                if boosted[i] is False:
                    for k in range(1, n + 1):
                        if k not in offered:
                            edges._set(i, k, 0.0)
        else:
            # Empirical-minimum item anchors the 'no boost seen' group.
            ratios = {}
            for i in items:
                x_c = _count(table, 0, i)
                x_s = _count(table, s + 1, i)
                if x_c > 0:
                    ratios[i] = (x_s / table.sizes[s + 1]) / (x_c / table.sizes[0])
            if not ratios:
                continue
            low_item = min(ratios, key=lambda i: (ratios[i], i))
            above: dict[int, bool | None] = {low_item: False}
            for i in items:
                if i == low_item:
                    continue
                z = _safe_z(table, i, low_item, s)
                above[i] = None if z is None else abs(z) > threshold
            for a, i in enumerate(items):
                for j in items[a + 1:]:
                    z = _safe_z(table, i, j, s)
                    if z is None:
                        continue
                    if abs(z) > threshold:
                        edges._set(i, j, 0.0)
                    elif above[i] and above[j]:
                        edges._set(i, j, 1.0)
    if not outside:
        for s, items in enumerate(table.assortments[1:]):
            ratios = {}
            for i in items:
                x_c = _count(table, 0, i)
                if x_c > 0:
                    ratios[i] = (_count(table, s + 1, i) / table.sizes[s + 1]) / (
                        x_c / table.sizes[0]
                    )
            if not ratios:
                continue
            low_item = min(ratios, key=lambda i: (ratios[i], i))
            group = [low_item]
            for i in items:
                if i == low_item:
                    continue
                z = _safe_z(table, i, low_item, s)
                if z is not None and abs(z) <= threshold:
                    group.append(i)
            group.sort()
            offered = set(items)
            split = any(
                edges.get(group[a], group[c]) == 0.0
                for a in range(len(group))
                for c in range(a + 1, len(group))
            )
            if split:
                for i in group:
                    for k in range(1, n + 1):
                        if k not in offered:
                            edges._set(i, k, 0.0)
            else:
                for a in range(len(group)):
                    for c in range(a + 1, len(group)):
                        edges._set(group[a], group[c], 1.0)
    return _finalize_exact(edges)


def boost_factors_from_counts(table: ChoiceCountTable) -> BoostTable:
    """Empirical boost factors, for running the exact algorithms on counts."""
    probs = empirical_probabilities(table)
    return boost_factors(probs[0], probs[1:], labels=table.labels[1:])


def theorem_pair_count(n: int, num_experiments: int) -> int:
    """Number of simultaneously controlled estimates in the sample bound."""
    return (num_experiments + 1) * (n + 1 + math.comb(n + 1, 2))


def theorem_z_threshold(pair_count: int, delta: float) -> float:
    """|z| cutoff below which a pair is declared equal, valid w.p. 1 - delta."""
    return 8.0 * math.sqrt(3.0 * math.log(2.0 * pair_count / delta))


def theorem_sample_size(
    rho: float, margin: float, pair_count: int, delta: float, C: float = 25.0
) -> int:
    """Per-assortment samples sufficient for the cutoff to classify every pair."""
    return math.ceil(3.0 * C * C * math.log(2.0 * pair_count / delta) / (rho * margin * margin))


def theorem_margins(model, design: ExperimentDesign, tol: float = EXACT_TOLERANCE) -> tuple[float, float]:
    """(rho, Delta): control floor and smallest detectable share difference.

    rho floors every control probability (outside included).  Delta is the
    smallest |conditional share difference| over experiment pairs whose
    boosts genuinely differ; with no such pair it defaults to 1.
    """
    control = choice_probabilities(model, design.control)
    rho = min(control.probs.values())
    delta = 1.0
    for items in design.experiments:
        if not items:
            continue
        cp = choice_probabilities(model, items)
        support = ([0] if model.outside else []) + list(items)
        bf = {i: cp.probs[i] / control.probs[i] for i in support}
        for a, i in enumerate(support):
            for j in support[a + 1:]:
                if _releq(bf[i], bf[j], tol):
                    continue
                share_s = cp.probs[i] / (cp.probs[i] + cp.probs[j])
                share_c = control.probs[i] / (control.probs[i] + control.probs[j])
                delta = min(delta, abs(share_s - share_c))
    return rho, delta
