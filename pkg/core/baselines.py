"""Classical reference tours: nearest neighbour, 2-opt and Held-Karp.

These produce the benchmark tours the pointer models are supervised on and
scored against. 2-opt seeded from nearest neighbour stands in for a full
Lin-Kernighan implementation; Held-Karp is exact and used when n is small
enough for its 2^n * n table.
"""

from __future__ import annotations

import logging
from typing import Tuple

import numpy as np

from core.tsp import START_CITY, Tour, TourLike, TspInstance, as_tour, ensure_valid, tour_cost

logger = logging.getLogger(__name__)

HELD_KARP_MAX_N = 14
IMPROVE_EPS = 1e-12
BENCHMARK_METHODS = ("two_opt", "held_karp")


class CapacityError(ValueError):
    """Raised when an exact solve would need more memory than allowed."""


def nearest_neighbor(instance: TspInstance, start: int = START_CITY) -> Tour:
    """Greedy closest-unvisited walk; ties go to the lowest city index."""
    if not 0 <= start < instance.n:
        raise ValueError(f"start city {start} out of range for n={instance.n}")
    costs = instance.costs
    visited = np.zeros(instance.n, dtype=bool)
    order = [start]
    visited[start] = True
    for _ in range(instance.n - 1):
        row = np.where(visited, np.inf, costs[order[-1]])
        nxt = int(np.argmin(row))
        order.append(nxt)
        visited[nxt] = True
    return Tour(tuple(order))


def two_opt(instance: TspInstance, tour: TourLike) -> Tour:
    """First-improvement 2-opt until no segment reversal shortens the tour.

    Position 0 never moves, so the start city is preserved.
    """
    t = as_tour(tour)
    order = list(ensure_valid(instance, t, start=t.start).order)
    c = instance.costs
    n = len(order)
    improved = True
    while improved:
        improved = False
        for i in range(1, n - 1):
            a, b = order[i - 1], order[i]
            for j in range(i + 1, n):
                cc, d = order[j], order[(j + 1) % n]
                delta = c[a, cc] + c[b, d] - c[a, b] - c[cc, d]
                if delta < -IMPROVE_EPS:
                    order[i:j + 1] = order[i:j + 1][::-1]
                    improved = True
                    break
            if improved:
                break
    return Tour(tuple(order))


def held_karp(instance: TspInstance) -> Tuple[Tour, float]:
    """Exact optimum by bitmask DP over subsets containing the start city 0."""
    n = instance.n
    if n > HELD_KARP_MAX_N:
        raise CapacityError(f"held_karp supports n <= {HELD_KARP_MAX_N}, got {n}")
    c = instance.costs
    if n == 2:
        return Tour((0, 1)), float(2 * c[0, 1])

    size = 1 << n
    dp = np.full((size, n), np.inf)
    parent = np.full((size, n), -1, dtype=np.int64)
    dp[1, 0] = 0.0
    cities = np.arange(n)
    for mask in range(1, size, 2):  # every subset that contains city 0
        row = dp[mask]
        if not np.isfinite(row).any():
            continue
        # best way to reach each city k from any end city j in mask
        cand = row[:, None] + c
        best_j = np.argmin(cand, axis=0)
        best = cand[best_j, cities]
        outside = ((mask >> cities) & 1) == 0
        for k in cities[outside]:
            nm = mask | (1 << int(k))
            if best[k] < dp[nm, k]:
                dp[nm, k] = best[k]
                parent[nm, k] = best_j[k]

    full = size - 1
    closing = dp[full] + c[:, 0]
    closing[0] = np.inf
    last = int(np.argmin(closing))

    order = []
    mask, city = full, last
    while city != 0:
        order.append(city)
        prev = int(parent[mask, city])
        mask ^= 1 << city
        city = prev
    order.append(0)
    tour = Tour(tuple(reversed(order)))
    return tour, tour_cost(instance, tour)


def benchmark_tour(instance: TspInstance, method: str = "two_opt") -> Tour:
    """Reference tour for supervision and deviation scoring."""
    if method == "held_karp":
        return held_karp(instance)[0]
    if method == "two_opt":
        return two_opt(instance, nearest_neighbor(instance))
    raise ValueError(f"unknown benchmark method {method!r}; expected one of {BENCHMARK_METHODS}")


def benchmark_cost(instance: TspInstance, method: str = "two_opt") -> float:
    return tour_cost(instance, benchmark_tour(instance, method))
