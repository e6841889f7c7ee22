"""Tests for parameter recovery from choice probabilities and counts."""

import itertools

import numpy as np
import pytest

from nestlab.designs import balanced_enumeration, slice_design
from nestlab.metrics import rmse_soft
from nestlab.model import (
    NestPartition,
    NestedLogitModel,
    choice_probabilities,
    generate_ground_truth,
    normalize_identifiable,
)
from nestlab.recovery import (
    RecoveryError,
    SingularSystemError,
    find_assortment_pair,
    intersection_log_determinant,
    recover_all,
    recover_least_squares,
    within_nest_weights,
)
from nestlab.sampling import allocate_customers, exact_count_table, sample_choices


def test_within_nest_weights_normalizes_lowest_index():
    control = choice_probabilities(
        NestedLogitModel(
            partition=NestPartition([(1, 3), (2,)]),
            weights=(2.0, 5.0, 6.0),
            lambdas=(0.5, 1.0),
            outside=True,
        ),
        (1, 2, 3),
    )
    weights = within_nest_weights(control, NestPartition([(1, 3), (2,)]))
    assert weights[1] == pytest.approx(1.0)
    assert weights[3] == pytest.approx(3.0)  # 6 / 2 within the nest
    assert weights[2] == pytest.approx(1.0)  # its own nest's base


def test_round_trip_exact_probabilities():
    """Recovered parameters reproduce the choice function everywhere"""
    rng = np.random.default_rng(50)
    for outside in (True, False):
        for _ in range(15):
            n = int(rng.integers(2, 11))
            model = generate_ground_truth(n, rng, outside=outside)
            enc = balanced_enumeration(n, 2)
            design = slice_design(enc)
            rows = exact_count_table(model, design)
            recovered = recover_all(rows, model.partition, design, enc)
            assert rmse_soft(model, recovered) < 1e-10, (n, outside)


def test_round_trip_recovers_parameters_up_to_normalization():
    rng = np.random.default_rng(51)
    model = generate_ground_truth(9, rng)
    enc = balanced_enumeration(9, 2)
    design = slice_design(enc)
    rows = exact_count_table(model, design)
    recovered = recover_all(rows, model.partition, design, enc)
    norm = normalize_identifiable(model)
    assert recovered.partition == norm.partition
    for i in range(1, 10):
        assert recovered.weight(i) == pytest.approx(norm.weight(i), rel=1e-7)
    for lam_a, lam_b in zip(recovered.lambdas, norm.lambdas):
        assert lam_a == pytest.approx(lam_b, abs=1e-7)


def test_degenerate_nest_round_trip():
    """A zero-dissimilarity nest carries its own weight parameter"""
    model = NestedLogitModel(
        partition=NestPartition([(1, 2, 3), (4,), (5, 6)]),
        weights=(1.0, 2.0, 1.5, 3.0, 0.5, 1.0),
        lambdas=(0.0, 1.0, 0.4),
        outside=True,
        degenerate_weights={0: 3.7},
    )
    enc = balanced_enumeration(6, 2)
    design = slice_design(enc)
    rows = exact_count_table(model, design)
    recovered = recover_all(rows, model.partition, design, enc)
    k = recovered.partition.nest_of(1)
    assert recovered.lambdas[k] == 0.0
    assert recovered.degenerate_weights[k] == pytest.approx(3.7, rel=1e-7)
    assert rmse_soft(model, recovered) < 1e-10


def test_single_nest_without_outside_falls_back_to_flat_weights():
    """One all-item nest leaves lambda unobservable; shares pin the weights"""
    model = NestedLogitModel(
        partition=NestPartition([(1, 2, 3)]),
        weights=(1.0, 2.0, 3.0),
        lambdas=(0.7,),
        outside=False,
    )
    enc = balanced_enumeration(3, 2)
    design = slice_design(enc)
    rows = exact_count_table(model, design)
    recovered = recover_all(rows, NestPartition([(1, 2, 3)]), design, enc)
    got = choice_probabilities(recovered, (1, 2, 3))
    want = choice_probabilities(model, (1, 2, 3))
    for i in (1, 2, 3):
        assert got.prob(i) == pytest.approx(want.prob(i), abs=1e-12)


def test_find_assortment_pair_cuts_both_nests_distinctly():
    rng = np.random.default_rng(52)
    for _ in range(30):
        n = int(rng.integers(4, 20))
        model = generate_ground_truth(n, rng)
        multi = [
            idx
            for idx, nest in enumerate(model.partition.nests)
            if len(nest) >= 2
        ]
        if len(multi) < 2:
            continue
        enc = balanced_enumeration(n, 2)
        design = slice_design(enc)
        a, b = multi[0], multi[1]
        nest_a = model.partition.nests[a]
        nest_b = model.partition.nests[b]
        s_idx, t_idx = find_assortment_pair(design, nest_a, nest_b, enc)
        s = set(design.experiments[s_idx])
        t = set(design.experiments[t_idx])
        for nest in (nest_a, nest_b):
            assert set(nest) & s and set(nest) & t
        assert (set(nest_a) & s, set(nest_b) & s) != (set(nest_a) & t, set(nest_b) & t)
        # at least one assortment cuts each nest properly
        assert set(nest_a) - s or set(nest_a) - t
        assert set(nest_b) - s or set(nest_b) - t


def test_intersection_determinant_nonzero_for_generic_weights():
    rng = np.random.default_rng(53)
    for _ in range(20):
        n = 8
        model = generate_ground_truth(n, rng)
        multi = [nest for nest in model.partition.nests if len(nest) >= 2]
        if len(multi) < 2:
            continue
        enc = balanced_enumeration(n, 2)
        design = slice_design(enc)
        weights = {i: model.weight(i) for i in range(1, n + 1)}
        s_idx, t_idx = find_assortment_pair(design, multi[0], multi[1], enc)
        det = intersection_log_determinant(
            weights, multi[0], multi[1],
            design.experiments[s_idx], design.experiments[t_idx],
        )
        assert abs(det) > 1e-12


def test_recovery_raises_on_degenerate_geometry():
    """Equal weights across twin nests collapse the linear system"""
    model = NestedLogitModel(
        partition=NestPartition([(1, 2), (3, 4)]),
        weights=(1.0, 1.0, 1.0, 1.0),
        lambdas=(0.4, 0.7),
        outside=False,
    )
    enc = balanced_enumeration(4, 2)
    design = slice_design(enc)
    rows = exact_count_table(model, design)
    with pytest.raises(SingularSystemError):
        recover_all(rows, model.partition, design, enc)


def test_recover_all_validates_row_count():
    model = generate_ground_truth(4, np.random.default_rng(3))
    enc = balanced_enumeration(4, 2)
    design = slice_design(enc)
    rows = exact_count_table(model, design)
    with pytest.raises(ValueError):
        recover_all(rows[:-1], model.partition, design, enc)


def test_least_squares_recovery_approaches_truth():
    rng = np.random.default_rng(54)
    model = generate_ground_truth(8, rng)
    enc = balanced_enumeration(8, 2)
    design = slice_design(enc)
    m = 300000
    table = sample_choices(model, design, [m] * (design.num_experiments + 1), seed=11)
    fit = recover_least_squares(table, model.partition, design)
    assert rmse_soft(model, fit.model) < 0.01
    assert "rank-deficient" not in fit.flags


def test_least_squares_clamps_lambda_into_range():
    rng = np.random.default_rng(55)
    model = generate_ground_truth(6, rng)
    enc = balanced_enumeration(6, 2)
    design = slice_design(enc)
    # tiny samples push raw estimates outside [0, 1]; the fit must not
    table = sample_choices(model, design, [40] * (design.num_experiments + 1), seed=12)
    fit = recover_least_squares(table, model.partition, design)
    for lam in fit.model.lambdas:
        assert 0.0 <= lam <= 1.0


def test_least_squares_flags_unobservable_lambda():
    """A nest never split by the design leaves its lambda defaulted"""
    rng = np.random.default_rng(56)
    model = NestedLogitModel(
        partition=NestPartition([(1, 2), (3,), (4,)]),
        weights=(1.0, 2.0, 1.5, 0.5),
        lambdas=(0.5, 1.0, 1.0),
        outside=True,
    )
    from nestlab.designs import ExperimentDesign

    design = ExperimentDesign(
        n=4,
        experiments=[(1, 2, 3), (1, 2, 4)],  # nest {1,2} always offered whole
        labels=("A", "B"),
        scheme="manual",
    )
    table = sample_choices(model, design, [5000] * 3, seed=13)
    fit = recover_least_squares(table, model.partition, design)
    assert any(flag.endswith("lambda-defaulted") for flag in fit.flags)
