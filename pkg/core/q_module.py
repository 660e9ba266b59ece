"""Q-network over context vectors, its target copy, replay buffer and TD loss.

Q(s, a) = w2 . tanh(W1 c_sa + b1) + b2, one forward per feasible action.
Values used as temperatures or inside TD targets are clamped to
[Q_FLOOR, 1 / (1 - gamma)]: rewards lie in [0, 1] so the true value can never
exceed the geometric bound, and the floor keeps the reciprocal temperature
finite. The online prediction inside the TD loss stays unclamped so the
regression has a gradient even when the network sits outside the bounds.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from typing import Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.autograd import Tensor, add, as_tensor, dense_forward, matmul, mean, no_grad, square, stack
from core.environment import EpisodeState, InvalidStateError, feasible_actions
from core.pointer_model import ModelParams, PrefixFeaturizer, Q_PARAMS

logger = logging.getLogger(__name__)

Q_FLOOR = 1e-3


def q_ceiling(gamma: float) -> float:
    if not 0 <= gamma < 1:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    return 1.0 / (1.0 - gamma)


@dataclass
class QNetwork:
    """View over the four Q tensors; works for online Parameters and frozen target copies."""
    W1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def of(cls, params: ModelParams) -> "QNetwork":
        return cls(params["q_W1"], params["q_b1"], params["q_w2"], params["q_b2"])

    def raw(self, contexts) -> Tensor:
        """Unclamped outputs; a (m, k) batch gives (m,), a single (k,) context a scalar."""
        hidden = dense_forward(as_tensor(contexts), self.W1, self.b1, activation="tanh")
        bias = self.b2 if hidden.data.ndim == 2 else self.b2[0]
        return add(matmul(hidden, self.w2), bias)


def clamp_q(raw: np.ndarray, gamma: float) -> np.ndarray:
    return np.clip(raw, Q_FLOOR, q_ceiling(gamma))


def q_value(net: QNetwork, context, gamma: float) -> float:
    with no_grad():
        return float(clamp_q(net.raw(context).data, gamma))


def q_values(net: QNetwork, contexts, gamma: float) -> np.ndarray:
    with no_grad():
        return clamp_q(np.atleast_1d(net.raw(contexts).data), gamma)


@dataclass
class TargetNetwork:
    arrays: Dict[str, np.ndarray]
    staleness: int = 0

    @classmethod
    def from_params(cls, params: ModelParams) -> "TargetNetwork":
        return cls({n: params[n].data.copy() for n in Q_PARAMS})

    @property
    def net(self) -> QNetwork:
        a = self.arrays
        return QNetwork(Tensor(a["q_W1"]), Tensor(a["q_b1"]), Tensor(a["q_w2"]), Tensor(a["q_b2"]))


def sync_target(net: ModelParams, target: TargetNetwork, C: int, step: int) -> TargetNetwork:
    """Every C steps copy the online Q weights into the target; otherwise age it by one."""
    if C < 1:
        raise ValueError(f"sync interval C must be >= 1, got {C}")
    if step % C == 0:
        for name in Q_PARAMS:
            target.arrays[name] = net[name].data.copy()
        target.staleness = 0
        logger.debug(f"target network synced at step {step}")
    else:
        target.staleness += 1
    return target


@dataclass(frozen=True)
class Transition:
    instance_id: int
    state: Tuple[int, ...]
    action: int
    reward: float
    next_state: Tuple[int, ...]
    terminal: bool
    n: int

    def __post_init__(self):
        if not 0.0 <= self.reward <= 1.0:
            raise ValueError(f"reward {self.reward} outside [0, 1]")
        if self.action in self.state:
            raise ValueError(f"action {self.action} already visited in {self.state}")


class ReplayBuffer:
    """Bounded FIFO of transitions with uniform sampling without replacement."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"replay capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self._items: Deque[Transition] = deque(maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def push(self, item: Transition) -> None:
        self._items.append(item)

    def ready(self, batch_size: int) -> bool:
        return len(self._items) >= batch_size

    def sample(self, batch_size: int, rng: np.random.Generator) -> Optional[List[Transition]]:
        """None while the buffer holds fewer than `batch_size` items."""
        if batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {batch_size}")
        if not self.ready(batch_size):
            return None
        picks = rng.choice(len(self._items), size=batch_size, replace=False)
        return [self._items[int(i)] for i in picks]


def replay_push(buffer: ReplayBuffer, item: Transition) -> None:
    buffer.push(item)


def replay_sample(buffer: ReplayBuffer, batch_size: int, rng: np.random.Generator) -> Optional[List[Transition]]:
    return buffer.sample(batch_size, rng)


def td_target(r: float, next_feasible_q: Sequence[float], terminal: bool, gamma: float) -> float:
    if terminal:
        return float(r)
    if len(next_feasible_q) == 0:
        raise InvalidStateError("non-terminal transition with no next-state Q values")
    return float(r + gamma * max(next_feasible_q))


def td_targets(batch: Sequence[Transition], target: TargetNetwork, featurizer: PrefixFeaturizer,
               gamma: float) -> np.ndarray:
    tnet = target.net
    out = np.empty(len(batch))
    for i, tr in enumerate(batch):
        if tr.terminal:
            out[i] = td_target(tr.reward, [], True, gamma)
            continue
        actions = feasible_actions(EpisodeState(tr.next_state, tr.n))
        with no_grad():
            _, ctx = featurizer.contexts(tr.instance_id, tr.next_state, actions)
        out[i] = td_target(tr.reward, q_values(tnet, ctx.detach(), gamma), False, gamma)
    return out


def td_loss(batch: Sequence[Transition], params: ModelParams, target: TargetNetwork,
            featurizer: PrefixFeaturizer, gamma: float) -> Tensor:
    """Mean squared TD error; the target branch never carries gradient.

    Gradient reaches the sequence parameters only when the featurizer tracks it.
    """
    if not batch:
        raise ValueError("td_loss needs a non-empty batch")
    rows = []
    for tr in batch:
        _, ctx = featurizer.contexts(tr.instance_id, tr.state, [tr.action])
        rows.append(ctx[0])
    predicted = QNetwork.of(params).raw(stack(rows))
    # online branch first: a tracking featurizer must not memoize untracked prefixes for it
    targets = td_targets(batch, target, featurizer, gamma)
    return mean(square(predicted - Tensor(targets)))
