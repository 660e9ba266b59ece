"""Episodic TSP environment: states are visited prefixes, actions are next cities.

Transitions are deterministic and the graph is fully connected, so the feasible
set is simply every unvisited city. Reward for moving i -> a is
1 - c[i, a] / sum_j c[j, a], which lies in [0, 1] because the column sum
includes c[i, a] itself. The closing edge back to the start earns no reward;
it still counts in the tour cost.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import FrozenSet, Tuple

import numpy as np

from core.tsp import Tour, TspInstance


class InfeasibleActionError(ValueError):
    """Raised when an action names a visited or out-of-range city."""


class InvalidStateError(ValueError):
    """Raised for malformed states, or when an operation needs a non-terminal state and gets a terminal one."""


@dataclass(frozen=True)
class EpisodeState:
    visited: Tuple[int, ...]
    n: int

    def __post_init__(self):
        object.__setattr__(self, "visited", tuple(int(c) for c in self.visited))
        if not self.visited:
            raise InvalidStateError("state must contain the start city")
        if len(set(self.visited)) != len(self.visited):
            raise InvalidStateError(f"visited has duplicates: {self.visited}")
        outside = [c for c in self.visited if not 0 <= c < self.n]
        if outside:
            raise InvalidStateError(f"visited cities {outside} outside 0..{self.n - 1}")

    @property
    def visited_set(self) -> FrozenSet[int]:
        return frozenset(self.visited)

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.n, dtype=bool)
        m[list(self.visited)] = True
        return m

    @property
    def current(self) -> int:
        return self.visited[-1]

    @property
    def start(self) -> int:
        return self.visited[0]

    @property
    def t(self) -> int:
        return len(self.visited) - 1

    @property
    def terminal(self) -> bool:
        return len(self.visited) == self.n


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    next_state: EpisodeState
    terminal: bool


def reset(instance: TspInstance, start: int = 0) -> EpisodeState:
    if not 0 <= start < instance.n:
        raise ValueError(f"start city {start} out of range for n={instance.n}")
    return EpisodeState(visited=(start,), n=instance.n)


def feasible_actions(state: EpisodeState) -> Tuple[int, ...]:
    """Unvisited cities in ascending order."""
    seen = state.visited_set
    return tuple(c for c in range(state.n) if c not in seen)


def _check_action(state: EpisodeState, action: int) -> None:
    if not 0 <= action < state.n or action in state.visited_set:
        raise InfeasibleActionError(
            f"action {action} infeasible from state with visited={list(state.visited)}"
        )


def reward(instance: TspInstance, state: EpisodeState, action: int) -> float:
    _check_action(state, action)
    column = instance.costs[:, action]
    return float(1.0 - column[state.current] / column.sum())


def step(instance: TspInstance, state: EpisodeState, action: int) -> StepOutcome:
    r = reward(instance, state, action)
    nxt = EpisodeState(visited=state.visited + (int(action),), n=state.n)
    return StepOutcome(reward=r, next_state=nxt, terminal=nxt.terminal)


def to_tour(state: EpisodeState) -> Tour:
    if not state.terminal:
        raise InvalidStateError(f"episode not finished: {len(state.visited)}/{state.n} cities")
    return Tour(state.visited)
