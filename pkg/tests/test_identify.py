"""Tests for boost factors, statistical tests, and nest identification."""

import math

import numpy as np
import pytest

from nestlab.designs import ExperimentDesign, balanced_enumeration, naive_encoding, slice_design
from nestlab.identify import (
    BoostTable,
    TestConfig,
    ZeroEvidenceError,
    boost_factors,
    boost_factors_from_counts,
    exact_identify_with_outside,
    exact_identify_without_outside,
    noisy_identify_with_outside,
    noisy_identify_without_outside,
    p_value_equal,
    p_value_leq_outside,
    theorem_margins,
    theorem_pair_count,
    theorem_sample_size,
    theorem_z_threshold,
    z_statistic,
)
from nestlab.metrics import rand_index, rmse_soft_restricted
from nestlab.model import (
    ChoiceProbabilities,
    NestPartition,
    NestedLogitModel,
    choice_probabilities,
    generate_ground_truth,
)
from nestlab.recovery import recover_all
from nestlab.sampling import ChoiceCountTable, allocate_customers, exact_count_table, sample_choices


def test_boost_factors_from_drink_sales():
    """Four drinks, two restricted days: shares scaled against a full-menu day"""
    # day 1 offers everything and is the control; days 2 and 3 drop items.
    # 500 visitors per day, the remainder walks away.
    control = ChoiceProbabilities(
        assortment=(1, 2, 3, 4),
        probs={0: 0.0, 1: 0.4, 2: 0.2, 3: 0.2, 4: 0.2},
        outside=True,
    )
    day2 = ChoiceProbabilities(
        assortment=(1, 2), probs={0: 0.28, 1: 0.48, 2: 0.24}, outside=True
    )
    day3 = ChoiceProbabilities(
        assortment=(2, 3, 4), probs={0: 0.12, 2: 0.4, 3: 0.24, 4: 0.24}, outside=True
    )
    # item 1's control share would divide by zero if it were never chosen
    with pytest.raises(ValueError):
        boost_factors(control, [day2, day3])

    control = ChoiceProbabilities(
        assortment=(1, 2, 3, 4),
        probs={0: 0.1, 1: 0.36, 2: 0.18, 3: 0.18, 4: 0.18},
        outside=True,
    )
    day2 = ChoiceProbabilities(
        assortment=(1, 2), probs={0: 0.352, 1: 0.432, 2: 0.216}, outside=True
    )
    day3 = ChoiceProbabilities(
        assortment=(2, 3, 4), probs={0: 0.208, 2: 0.36, 3: 0.216, 4: 0.216}, outside=True
    )
    table = boost_factors(control, [day2, day3], labels=("day2", "day3"))
    # juices rise together by 20% when the other drinks vanish
    assert table.factors[0][1] == pytest.approx(1.2)
    assert table.factors[0][2] == pytest.approx(1.2)
    # without its nest-mate, item 2 doubles while the others gain 20%
    assert table.factors[1][2] == pytest.approx(2.0)
    assert table.factors[1][3] == pytest.approx(1.2)
    assert table.factors[1][4] == pytest.approx(1.2)


def test_single_experiment_deductions():
    """One experiment: unboosted items split from outside, equal boosts join"""
    n = 8
    design = ExperimentDesign(
        n=n, experiments=[(1, 2, 3, 4)], labels=("S",), scheme="manual"
    )
    table = BoostTable(
        n=n,
        outside=True,
        labels=("S",),
        assortments=((1, 2, 3, 4),),
        factors=({0: 1.3, 1: 1.3, 2: 1.6, 3: 1.9, 4: 1.9},),
    )
    edges, _ = exact_identify_with_outside(table, design)
    assert edges.get(3, 4) == 1.0  # same boost above the outside's joins
    assert edges.get(1, 2) == 0.0  # 1.3 vs 1.6
    assert edges.get(1, 3) == 0.0
    assert edges.get(2, 3) == 0.0
    assert edges.get(2, 4) == 0.0
    for k in (5, 6, 7, 8):
        assert edges.get(1, k) == 0.0  # item 1 is unboosted, its nest is inside S


def eight_item_model():
    # four nests over eight items; weights chosen with no coincidental ties
    return NestedLogitModel(
        partition=NestPartition([(1,), (2, 6), (3, 4, 5), (7, 8)]),
        weights=(1.1, 0.7, 1.9, 1.3, 0.8, 2.2, 0.9, 1.6),
        lambdas=(1.0, 0.45, 0.55, 0.35),
        outside=True,
    )


def test_boost_pattern_on_eight_items():
    """The qualitative boosted-vs-flat pattern across all six slices"""
    model = eight_item_model()
    design = slice_design(naive_encoding(8, 2))
    rows = exact_count_table(model, design)
    table = boost_factors(rows[0], rows[1:], labels=design.labels)

    flat = {
        "S(1,-0)": {7, 8},
        "S(1,-1)": {1},
        "S(2,-0)": {7, 8},
        "S(2,-1)": {1, 2, 6},
        "S(3,-0)": {2, 6},
        "S(3,-1)": {1},
    }
    for label, items, bf in zip(table.labels, table.assortments, table.factors):
        base = bf[0]
        for i in items:
            if i in flat[label]:
                assert bf[i] == pytest.approx(base, rel=1e-12), (label, i)
            else:
                assert bf[i] > base * (1 + 1e-9), (label, i)

    # boosted items from one nest share their factor, across nests they differ
    _, partition = exact_identify_with_outside(table, design)
    assert partition == model.partition


def test_exact_identification_recovers_generated_truths():
    rng = np.random.default_rng(21)
    for _ in range(25):
        n = int(rng.integers(2, 20))
        model = generate_ground_truth(n, rng)
        design = slice_design(balanced_enumeration(n, 2))
        rows = exact_count_table(model, design)
        table = boost_factors(rows[0], rows[1:], labels=design.labels)
        _, partition = exact_identify_with_outside(table, design)
        assert partition == model.partition, n


def test_exact_identification_without_outside_preserves_choice():
    """Merged singletons are fine as long as the induced choice agrees"""
    rng = np.random.default_rng(22)
    merged = 0
    for _ in range(25):
        n = int(rng.integers(3, 14))
        model = generate_ground_truth(n, rng, outside=False)
        design = slice_design(balanced_enumeration(n, 2))
        rows = exact_count_table(model, design)
        table = boost_factors(rows[0], rows[1:], labels=design.labels)
        _, partition = exact_identify_without_outside(table, design)
        merged += partition != model.partition
        recovered = recover_all(rows, partition, design, balanced_enumeration(n, 2))
        est = exact_count_table(recovered, design)
        assert rmse_soft_restricted(rows, est) < 1e-9
    # the ambiguity is real: some suites do merge singleton nests
    assert merged >= 1


def test_edge_matrix_records_exact_contradictions():
    n = 4
    design = ExperimentDesign(
        n=n, experiments=[(1, 2, 3), (1, 2, 4)], labels=("A", "B"), scheme="manual"
    )
    table = BoostTable(
        n=n,
        outside=True,
        labels=("A", "B"),
        assortments=((1, 2, 3), (1, 2, 4)),
        factors=(
            {0: 1.0, 1: 1.5, 2: 1.5, 3: 1.0},  # joins 1-2
            {0: 1.0, 1: 1.2, 2: 1.7, 4: 1.0},  # splits 1-2
        ),
    )
    edges, _ = exact_identify_with_outside(table, design)
    assert edges.inconsistencies, "conflicting deductions should be recorded"


def random_count_tables(num, seed, n_items=3):
    """Small two-assortment tables with uniformly random positive counts"""
    rng = np.random.default_rng(seed)
    items = tuple(range(1, n_items + 1))
    for _ in range(num):
        counts = []
        for _ in range(2):
            row = {i: int(rng.integers(1, 200)) for i in (0, *items)}
            counts.append(row)
        yield ChoiceCountTable(
            n=n_items,
            outside=True,
            labels=("control", "S"),
            assortments=(items, items),
            counts=tuple(counts),
            sizes=tuple(sum(row.values()) for row in counts),
        )


def test_z_statistic_antisymmetry_is_exact():
    for table in random_count_tables(300, seed=31):
        z_ij = z_statistic(table, 1, 2, 0)
        z_ji = z_statistic(table, 2, 1, 0)
        assert z_ij == -z_ji  # bitwise, not approximate


def test_z_statistic_matches_straight_line_formula():
    """Plain transcription of the pooled two-share comparison"""
    for table in random_count_tables(500, seed=32):
        x_s = table.counts[1]
        x_c = table.counts[0]
        m_s = table.sizes[1]
        m_c = table.sizes[0]
        ps_i, ps_j = x_s[1] / m_s, x_s[2] / m_s
        pc_i, pc_j = x_c[1] / m_c, x_c[2] / m_c
        num = ps_i / (ps_i + ps_j) - pc_i / (pc_i + pc_j)
        p_i = (ps_i + pc_i) / (ps_i + ps_j + pc_i + pc_j)
        p_j = (ps_j + pc_j) / (ps_i + ps_j + pc_i + pc_j)
        var = p_i * p_j * (1.0 / (x_s[1] + x_s[2]) + 1.0 / (x_c[1] + x_c[2]))
        want = num / math.sqrt(var)
        got = z_statistic(table, 1, 2, 0)
        assert got == pytest.approx(want, abs=1e-12)


def test_z_statistic_zero_when_shares_match():
    table = ChoiceCountTable(
        n=2,
        outside=True,
        labels=("control", "S"),
        assortments=((1, 2), (1, 2)),
        counts=({0: 10, 1: 30, 2: 60}, {0: 40, 1: 10, 2: 20}),
        sizes=(100, 70),
    )
    assert z_statistic(table, 1, 2, 0) == 0.0


def test_z_statistic_rejects_empty_evidence():
    table = ChoiceCountTable(
        n=2,
        outside=True,
        labels=("control", "S"),
        assortments=((1, 2), (1, 2)),
        counts=({0: 10, 1: 30, 2: 60}, {0: 70, 1: 0, 2: 0}),
        sizes=(100, 70),
    )
    with pytest.raises(ZeroEvidenceError):
        z_statistic(table, 1, 2, 0)


def test_p_values_follow_the_normal_tail():
    table = next(iter(random_count_tables(1, seed=33)))
    z = z_statistic(table, 1, 2, 0)
    assert p_value_equal(table, 1, 2, 0) == pytest.approx(math.erfc(abs(z) / math.sqrt(2)))
    z0 = z_statistic(table, 1, 0, 0)
    assert p_value_leq_outside(table, 1, 0) == pytest.approx(0.5 * math.erfc(z0 / math.sqrt(2)))


def test_noisy_identification_with_plentiful_data():
    rng = np.random.default_rng(40)
    hits = 0
    for trial in range(10):
        model = generate_ground_truth(8, rng)
        design = slice_design(balanced_enumeration(8, 2))
        alloc = allocate_customers(7 * 400000, design.num_experiments + 1)
        table = sample_choices(model, design, alloc, seed=100 + trial)
        _, partition = noisy_identify_with_outside(table, design)
        hits += rand_index(partition, model.partition)
    assert hits / 10 > 0.9


def test_noisy_identification_without_outside_runs():
    rng = np.random.default_rng(41)
    model = generate_ground_truth(8, rng, outside=False)
    design = slice_design(balanced_enumeration(8, 2))
    alloc = allocate_customers(7 * 200000, design.num_experiments + 1)
    table = sample_choices(model, design, alloc, seed=7)
    _, partition = noisy_identify_without_outside(table, design)
    assert partition.n == 8


def test_noisy_rejects_mismatched_outside_flag():
    model = generate_ground_truth(4, np.random.default_rng(1))
    design = slice_design(balanced_enumeration(4, 2))
    table = sample_choices(model, design, [50] * 5, seed=1)
    with pytest.raises(ValueError):
        noisy_identify_without_outside(table, design)


def test_threshold_identification_uses_fixed_cutoff():
    """With the cutoff from the sample bound, huge m classifies exactly"""
    rng = np.random.default_rng(42)
    model = generate_ground_truth(8, rng)
    design = slice_design(balanced_enumeration(8, 2))
    rho, margin = theorem_margins(model, design)
    k = theorem_pair_count(8, design.num_experiments)
    tau = theorem_z_threshold(k, delta=0.1)
    m = theorem_sample_size(rho, margin, k, delta=0.1)
    m = min(m, 10**7)  # cap: full bound can ask for billions
    table = sample_choices(model, design, [m] * (design.num_experiments + 1), seed=5)
    config = TestConfig(z_threshold=tau)
    _, partition = noisy_identify_with_outside(table, design, config)
    assert rand_index(partition, model.partition) == 1.0


def test_theorem_constants_straight_line():
    # K = (|S| + 1) (n + 1 + C(n+1, 2)) pairs, n = 8 with 6 experiments
    assert theorem_pair_count(8, 6) == 7 * (9 + 36)
    k = theorem_pair_count(8, 6)
    assert theorem_z_threshold(k, 0.1) == pytest.approx(
        8.0 * math.sqrt(3.0 * math.log(2.0 * k / 0.1))
    )
    assert theorem_sample_size(0.01, 0.05, k, 0.1) == math.ceil(
        3.0 * 625.0 * math.log(2.0 * k / 0.1) / (0.01 * 0.0025)
    )


def test_theorem_margins_on_symmetric_instance():
    """No unequal boosts anywhere leaves the margin at its default"""
    model = NestedLogitModel(
        partition=NestPartition([(1, 2)]),
        weights=(1.0, 1.0),
        lambdas=(0.5,),
        outside=True,
    )
    design = ExperimentDesign(n=2, experiments=[(1, 2)], labels=("S",), scheme="manual")
    rho, margin = theorem_margins(model, design)
    cp = choice_probabilities(model, (1, 2))
    assert rho == pytest.approx(min(cp.probs.values()))
    assert margin == 1.0


def test_test_config_defaults():
    config = TestConfig()
    assert config.alpha == 0.05
    assert config.beta == 0.95
    assert TestConfig(alpha=0.2).beta == pytest.approx(0.8)
    with pytest.raises(ValueError):
        TestConfig(alpha=1.5)


def test_boost_factors_from_counts_matches_ratio():
    model = eight_item_model()
    design = slice_design(naive_encoding(8, 2))
    table = sample_choices(model, design, [5000] * 7, seed=3)
    boosts = boost_factors_from_counts(table)
    emp_control = {i: c / table.sizes[0] for i, c in table.counts[0].items()}
    emp_s = {i: c / table.sizes[1] for i, c in table.counts[1].items()}
    for i in table.assortments[1]:
        assert boosts.factors[0][i] == pytest.approx(emp_s[i] / emp_control[i])
