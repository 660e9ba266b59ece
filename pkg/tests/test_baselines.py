"""Nearest neighbour, 2-opt and the exact Held-Karp oracle."""

import itertools

import numpy as np
import pytest

from core.baselines import (
    HELD_KARP_MAX_N,
    CapacityError,
    benchmark_cost,
    benchmark_tour,
    held_karp,
    nearest_neighbor,
    two_opt,
)
from core.tsp import InvalidTourError, generate_instance, instance_from_coords, tour_cost, validate_tour


def _brute_force(inst):
    return min(tour_cost(inst, (0,) + p) for p in itertools.permutations(range(1, inst.n)))


def test_collinear_nearest_neighbour():
    inst = instance_from_coords([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    assert nearest_neighbor(inst, 0).order == (0, 1, 2)


def test_two_city_nearest_neighbour():
    assert nearest_neighbor(generate_instance(2, seed=0)).order == (0, 1)


def test_nearest_neighbour_tie_goes_to_lowest_index(square):
    # from corner 0 both 1 and 3 are at distance 1
    assert nearest_neighbor(square, 0).order[1] == 1


def test_optimal_square_left_alone(square):
    out = two_opt(square, [0, 1, 2, 3])
    assert out.order == (0, 1, 2, 3)
    assert tour_cost(square, out) == pytest.approx(4.0)


def test_crossing_square_uncrossed(square):
    out = two_opt(square, [0, 2, 1, 3])
    assert tour_cost(square, out) == pytest.approx(4.0)
    assert out.start == 0


def test_two_opt_never_worsens(small_instance):
    start = [0, 3, 1, 5, 2, 4]
    assert tour_cost(small_instance, two_opt(small_instance, start)) <= tour_cost(small_instance, start)


def test_two_opt_rejects_invalid_tour(square):
    with pytest.raises(InvalidTourError):
        two_opt(square, [0, 1, 1, 3])


def test_two_opt_close_to_optimum_on_eight_cities():
    ratios = []
    for seed in range(10):
        inst = generate_instance(8, seed=500 + seed)
        ratios.append(tour_cost(inst, two_opt(inst, nearest_neighbor(inst))) / held_karp(inst)[1])
    assert np.mean(ratios) <= 1.05
    assert max(ratios) <= 1.10


def test_held_karp_square(square):
    tour, cost = held_karp(square)
    assert cost == pytest.approx(4.0)
    assert validate_tour(square, tour).ok


def test_held_karp_matches_brute_force_on_seven_cities():
    inst = generate_instance(7, seed=77)
    tour, cost = held_karp(inst)
    assert cost == pytest.approx(_brute_force(inst), abs=1e-12)
    assert tour_cost(inst, tour) == cost


def test_held_karp_two_cities():
    inst = generate_instance(2, seed=1)
    tour, cost = held_karp(inst)
    assert tour.order == (0, 1)
    assert cost == pytest.approx(2 * inst.costs[0, 1])


def test_held_karp_capacity_limit():
    with pytest.raises(CapacityError):
        held_karp(generate_instance(HELD_KARP_MAX_N + 1, seed=0))


def test_exact_heuristic_sandwich():
    rng = np.random.default_rng(42)
    for k in range(50):
        inst = generate_instance(int(rng.integers(5, 11)), seed=1000 + k)
        nn = nearest_neighbor(inst)
        exact = held_karp(inst)[1]
        improved = tour_cost(inst, two_opt(inst, nn))
        assert exact <= improved + 1e-12
        assert improved <= tour_cost(inst, nn) + 1e-12
        if inst.n <= 8:
            assert exact == pytest.approx(_brute_force(inst), abs=1e-12)


def test_benchmark_methods(small_instance):
    assert benchmark_cost(small_instance, "held_karp") <= benchmark_cost(small_instance, "two_opt") + 1e-12
    assert benchmark_tour(small_instance).start == 0
    with pytest.raises(ValueError):
        benchmark_tour(small_instance, "lkh")
