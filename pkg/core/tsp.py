"""TSP instances, tours and the tour objective.

Instances are symmetric, fully connected and carry optional unit-square
coordinates. Tours are permutations that start at city 0 and close back on it
implicitly. Validity is a permutation check: the degree and subtour constraints
of the integer-programming formulation hold structurally for any permutation,
so they never need to be evaluated edge by edge.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

START_CITY = 0
EUCLID_TOL = 1e-12


class InvalidTourError(ValueError):
    """Raised when a tour is not a permutation of the instance's cities."""


def _euclidean(coords: np.ndarray) -> np.ndarray:
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=-1))


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class TspInstance:
    """Symmetric cost matrix plus optional 2D coordinates.

    Construction validates the matrix; an instance that exists is well formed.
    """
    costs: np.ndarray
    coords: Optional[np.ndarray] = None
    seed: Optional[int] = None

    def __post_init__(self):
        costs = _frozen(self.costs)
        if costs.ndim != 2 or costs.shape[0] != costs.shape[1]:
            raise ValueError(f"costs must be square, got shape {costs.shape}")
        n = costs.shape[0]
        if n < 2:
            raise ValueError(f"instance needs at least 2 cities, got {n}")
        if not np.all(np.isfinite(costs)):
            raise ValueError("costs contain non-finite entries")
        if not np.array_equal(costs, costs.T):
            raise ValueError("costs must be symmetric")
        if np.any(np.diag(costs) != 0):
            raise ValueError("costs diagonal must be zero")
        off = costs[~np.eye(n, dtype=bool)]
        if np.any(off <= 0):
            raise ValueError("off-diagonal costs must be positive")
        object.__setattr__(self, "costs", costs)

        if self.coords is not None:
            coords = _frozen(self.coords)
            if coords.shape != (n, 2):
                raise ValueError(f"coords must have shape ({n}, 2), got {coords.shape}")
            if np.max(np.abs(_euclidean(coords) - costs)) > EUCLID_TOL:
                raise ValueError("costs do not match Euclidean distances of coords")
            object.__setattr__(self, "coords", coords)

    @property
    def n(self) -> int:
        return int(self.costs.shape[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, TspInstance):
            return NotImplemented
        if self.n != other.n or self.seed != other.seed:
            return False
        if (self.coords is None) != (other.coords is None):
            return False
        if self.coords is not None and not np.array_equal(self.coords, other.coords):
            return False
        return bool(np.array_equal(self.costs, other.costs))

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class Tour:
    """City order starting at the start city; the closing edge is implicit."""
    order: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "order", tuple(int(c) for c in self.order))

    @property
    def start(self) -> int:
        return self.order[0] if self.order else -1

    def __len__(self) -> int:
        return len(self.order)

    def __iter__(self):
        return iter(self.order)

    def edges(self):
        """Consecutive pairs including the closing edge."""
        k = len(self.order)
        return [(self.order[i], self.order[(i + 1) % k]) for i in range(k)]


TourLike = Union[Tour, Sequence[int]]


def as_tour(tour: TourLike) -> Tour:
    return tour if isinstance(tour, Tour) else Tour(tuple(tour))


@dataclass(frozen=True)
class TourCheck:
    """Outcome of validate_tour. Empty fields mean no violation of that kind."""
    length_mismatch: Optional[Tuple[int, int]] = None   # (got, expected)
    duplicated: Tuple[int, ...] = ()
    missing: Tuple[int, ...] = ()
    out_of_range: Tuple[int, ...] = ()
    wrong_start: Optional[int] = None
    reasons: Tuple[str, ...] = field(default=())

    @property
    def ok(self) -> bool:
        return not self.reasons

    def __bool__(self) -> bool:
        return self.ok


def validate_tour(instance: TspInstance, tour: TourLike, start: int = START_CITY) -> TourCheck:
    """Permutation check. Never raises; returns a report naming each violation."""
    order = list(as_tour(tour).order)
    n = instance.n
    reasons = []

    length_mismatch = None
    if len(order) != n:
        length_mismatch = (len(order), n)
        reasons.append(f"length mismatch: got {len(order)} cities, expected {n}")

    out_of_range = tuple(sorted({c for c in order if c < 0 or c >= n}))
    if out_of_range:
        reasons.append(f"cities out of range: {list(out_of_range)}")

    counts = np.bincount([c for c in order if 0 <= c < n], minlength=n)
    duplicated = tuple(int(c) for c in np.flatnonzero(counts > 1))
    missing = tuple(int(c) for c in np.flatnonzero(counts == 0))
    if duplicated:
        reasons.append(f"duplicated cities: {list(duplicated)}")
    if missing:
        reasons.append(f"missing cities: {list(missing)}")

    wrong_start = None
    if order and order[0] != start:
        wrong_start = order[0]
        reasons.append(f"tour starts at {order[0]}, expected {start}")

    return TourCheck(
        length_mismatch=length_mismatch,
        duplicated=duplicated,
        missing=missing,
        out_of_range=out_of_range,
        wrong_start=wrong_start,
        reasons=tuple(reasons),
    )


def ensure_valid(instance: TspInstance, tour: TourLike, start: int = START_CITY) -> Tour:
    t = as_tour(tour)
    check = validate_tour(instance, t, start)
    if not check.ok:
        raise InvalidTourError("; ".join(check.reasons))
    return t


def tour_cost(instance: TspInstance, tour: TourLike) -> float:
    """Sum of consecutive edge costs plus the closing edge back to the start."""
    t = ensure_valid(instance, tour, start=as_tour(tour).start)
    order = np.asarray(t.order)
    return float(instance.costs[order, np.roll(order, -1)].sum())


def generate_instance(n: int, seed: int) -> TspInstance:
    """Uniform random cities in the unit square with Euclidean costs."""
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    rng = np.random.default_rng(seed)
    coords = rng.uniform(0.0, 1.0, size=(n, 2))
    return TspInstance(costs=_euclidean(coords), coords=coords, seed=int(seed))


def instance_from_coords(coords, seed: Optional[int] = None) -> TspInstance:
    coords = np.asarray(coords, dtype=np.float64)
    return TspInstance(costs=_euclidean(coords), coords=coords, seed=seed)


def perturb_instance(instance: TspInstance, alpha: float, beta: float, seed: int) -> TspInstance:
    """Multiply every undirected edge by one draw from U(alpha, beta).

    The result keeps symmetry and a zero diagonal but drops coords, since the
    costs are no longer Euclidean.
    """
    if not (0 < alpha <= beta):
        raise ValueError(f"perturbation range must satisfy 0 < alpha <= beta, got ({alpha}, {beta})")
    n = instance.n
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n, k=1)
    delta = np.zeros((n, n))
    delta[iu] = rng.uniform(alpha, beta, size=len(iu[0])) if alpha < beta else alpha
    delta = delta + delta.T
    return TspInstance(costs=instance.costs * delta, coords=None, seed=instance.seed)
