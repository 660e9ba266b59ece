"""Instances, tour validity, tour cost and cost perturbation."""

import itertools

import numpy as np
import pytest

from core.baselines import held_karp
from core.tsp import (
    InvalidTourError,
    TspInstance,
    Tour,
    ensure_valid,
    generate_instance,
    perturb_instance,
    tour_cost,
    validate_tour,
)


def test_two_city_instance_is_symmetric():
    inst = generate_instance(2, seed=5)
    assert inst.costs[0, 1] == inst.costs[1, 0] > 0
    assert np.all(np.diag(inst.costs) == 0)


def test_generation_is_deterministic():
    assert generate_instance(12, seed=3) == generate_instance(12, seed=3)
    assert generate_instance(12, seed=3) != generate_instance(12, seed=4)


def test_coords_stay_in_unit_square():
    for seed in range(10):
        coords = generate_instance(20, seed).coords
        assert coords.min() >= 0.0 and coords.max() <= 1.0


def test_instance_arrays_are_read_only(small_instance):
    with pytest.raises(ValueError):
        small_instance.costs[0, 1] = 5.0


@pytest.mark.parametrize("costs, message", [
    (np.array([[0.0, 1.0], [2.0, 0.0]]), "symmetric"),
    (np.array([[1.0, 1.0], [1.0, 0.0]]), "diagonal"),
    (np.array([[0.0, 0.0], [0.0, 0.0]]), "positive"),
    (np.array([[0.0, np.inf], [np.inf, 0.0]]), "non-finite"),
])
def test_malformed_cost_matrices_rejected(costs, message):
    with pytest.raises(ValueError, match=message):
        TspInstance(costs=costs)


def test_coords_must_match_costs():
    with pytest.raises(ValueError, match="Euclidean"):
        TspInstance(costs=np.array([[0.0, 2.0], [2.0, 0.0]]), coords=np.array([[0.0, 0.0], [1.0, 0.0]]))


def test_square_perimeter_costs_four(square):
    assert tour_cost(square, [0, 1, 2, 3]) == pytest.approx(4.0, abs=1e-12)


def test_two_city_tour_is_out_and_back():
    inst = generate_instance(2, seed=9)
    assert tour_cost(inst, [0, 1]) == pytest.approx(2 * inst.costs[0, 1])


def test_brute_force_minimum_equals_held_karp():
    inst = generate_instance(6, seed=21)
    best = min(tour_cost(inst, (0,) + p) for p in itertools.permutations(range(1, 6)))
    assert best == pytest.approx(held_karp(inst)[1], abs=1e-12)


def test_cost_is_reversal_invariant(small_instance):
    fwd = [0, 3, 1, 5, 2, 4]
    rev = [0] + fwd[1:][::-1]
    assert tour_cost(small_instance, fwd) == pytest.approx(tour_cost(small_instance, rev), abs=1e-12)


def test_cost_bounded_by_edge_extremes(small_instance):
    off = small_instance.costs[~np.eye(6, dtype=bool)]
    cost = tour_cost(small_instance, range(6))
    assert 6 * off.min() <= cost <= 6 * off.max()


def test_valid_tour_passes():
    inst = generate_instance(4, seed=0)
    assert validate_tour(inst, [0, 1, 2, 3]).ok


def test_duplicate_and_missing_reported():
    inst = generate_instance(4, seed=0)
    check = validate_tour(inst, [0, 1, 1, 3])
    assert not check
    assert check.duplicated == (1,)
    assert check.missing == (2,)


def test_length_mismatch_reported():
    inst = generate_instance(4, seed=0)
    check = validate_tour(inst, [0, 1, 2])
    assert check.length_mismatch == (3, 4)


def test_wrong_start_and_out_of_range_reported():
    inst = generate_instance(4, seed=0)
    check = validate_tour(inst, [1, 0, 2, 7])
    assert check.wrong_start == 1
    assert check.out_of_range == (7,)
    assert len(check.reasons) >= 2


def test_ensure_valid_raises_with_reasons():
    inst = generate_instance(4, seed=0)
    with pytest.raises(InvalidTourError, match="duplicated"):
        ensure_valid(inst, Tour((0, 1, 1, 3)))


def test_identity_perturbation_keeps_costs(small_instance):
    out = perturb_instance(small_instance, 1.0, 1.0, seed=4)
    assert np.array_equal(out.costs, small_instance.costs)
    assert out.coords is None


def test_perturbation_ratios_within_bounds(small_instance):
    out = perturb_instance(small_instance, 0.9, 1.1, seed=4)
    off = ~np.eye(6, dtype=bool)
    ratio = out.costs[off] / small_instance.costs[off]
    assert ratio.min() >= 0.9 and ratio.max() <= 1.1
    assert np.array_equal(out.costs, out.costs.T)
    assert np.all(np.diag(out.costs) == 0)


def test_constant_perturbation_scales_tour_cost(small_instance):
    tour = [0, 2, 4, 1, 3, 5]
    scaled = perturb_instance(small_instance, 1.5, 1.5, seed=0)
    assert tour_cost(scaled, tour) == pytest.approx(1.5 * tour_cost(small_instance, tour), rel=1e-12)


def test_perturbation_rejects_bad_range(small_instance):
    with pytest.raises(ValueError):
        perturb_instance(small_instance, 1.1, 0.9, seed=0)
