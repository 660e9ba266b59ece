"""Tempered pointer policy and the metric suite.

The per-action temperature is 1/Q, so exp(u / T) == exp(u * Q): Q > 1
sharpens the attention distribution, Q < 1 flattens it and Q == 1 gives the
plain pointer softmax back. Distributions live on the feasible actions only,
ordered by city index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence, Tuple

import Levenshtein
import numpy as np

from core.tsp import TourLike, TspInstance, as_tour, ensure_valid, tour_cost


@dataclass(frozen=True)
class ActionDistribution:
    support: Tuple[int, ...]
    probs: np.ndarray
    logits: np.ndarray
    q_values: np.ndarray
    temperatures: np.ndarray

    def prob(self, action: int) -> float:
        """Probability of `action`; exactly 0 for anything outside the support."""
        try:
            return float(self.probs[self.support.index(action)])
        except ValueError:
            return 0.0

    def as_dict(self):
        return dict(zip(self.support, self.probs.tolist()))


def _log_partition(z: np.ndarray) -> float:
    m = float(np.max(z))
    return m + float(np.log(np.exp(z - m).sum()))


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - np.max(z))
    return e / e.sum()


def _aligned(logits: Mapping[int, float], q: Mapping[int, float]):
    if set(logits) != set(q):
        raise ValueError(f"logit and Q keys differ: {sorted(set(logits) ^ set(q))}")
    if not logits:
        raise ValueError("empty action set")
    support = tuple(sorted(int(a) for a in logits))
    u = np.array([logits[a] for a in support], dtype=np.float64)
    qv = np.array([q[a] for a in support], dtype=np.float64)
    return support, u, qv


def tempered_softmax(logits: Mapping[int, float], q: Mapping[int, float]) -> ActionDistribution:
    support, u, qv = _aligned(logits, q)
    if np.any(qv <= 0):
        raise ValueError("Q values must be positive to act as reciprocal temperatures")
    return ActionDistribution(
        support=support,
        probs=_softmax(u * qv),
        logits=u,
        q_values=qv,
        temperatures=1.0 / qv,
    )


def plain_softmax(logits: Mapping[int, float]) -> ActionDistribution:
    return tempered_softmax(logits, {a: 1.0 for a in logits})


def select_action(dist: ActionDistribution, mode: str, rng: np.random.Generator) -> int:
    """'sample' draws from probs; 'greedy' takes the argmax, lowest city index on ties."""
    if mode == "greedy":
        return dist.support[int(np.argmax(dist.probs))]
    if mode == "sample":
        return dist.support[int(rng.choice(len(dist.support), p=dist.probs))]
    raise ValueError(f"unknown selection mode {mode!r}")


def entropy(dist: ActionDistribution) -> float:
    """Shannon entropy in nats, with 0 log 0 taken as 0."""
    p = dist.probs[dist.probs > 0]
    return float(-(p * np.log(p)).sum())


def kl_direct(p: ActionDistribution, q: ActionDistribution) -> float:
    """sum p log(p / q) over the shared support."""
    if p.support != q.support:
        raise ValueError(f"supports differ: {p.support} vs {q.support}")
    if np.any(q.probs <= 0):
        raise ValueError("reference distribution must be strictly positive")
    mask = p.probs > 0
    return float((p.probs[mask] * np.log(p.probs[mask] / q.probs[mask])).sum())


def kl_closed_form(u: Mapping[int, float], q: Mapping[int, float]) -> float:
    """D_KL(tempered || plain) = sum pi~ [u (Q - 1) + omega], omega = log(Z_plain / Z_tempered)."""
    _, uv, qv = _aligned(u, q)
    tempered = _softmax(uv * qv)
    omega = _log_partition(uv) - _log_partition(uv * qv)
    return float((tempered * (uv * (qv - 1.0) + omega)).sum())


def levenshtein(a: TourLike, b: TourLike) -> int:
    """Unit-cost edit distance over the city sequences as emitted."""
    return int(Levenshtein.distance(list(as_tour(a).order), list(as_tour(b).order)))


@dataclass(frozen=True)
class TourMetrics:
    J: float
    sigma_B: int


def evaluate_tour_metrics(instance: TspInstance, tour: TourLike, benchmark_tour: TourLike) -> TourMetrics:
    ensure_valid(instance, benchmark_tour)
    return TourMetrics(J=tour_cost(instance, ensure_valid(instance, tour)), sigma_B=levenshtein(tour, benchmark_tour))


def policy_report(dists: Sequence[ActionDistribution]) -> dict:
    """Per-episode summary: mean entropy, mean Q, share of Q > 1 and mean KL to plain attention."""
    if not dists:
        return {"entropy": 0.0, "q_mean": 1.0, "q_sharpening": 0.0, "kl": 0.0}
    kls = [kl_closed_form(dict(zip(d.support, d.logits)), dict(zip(d.support, d.q_values))) for d in dists]
    return {
        "entropy": float(np.mean([entropy(d) for d in dists])),
        "q_mean": float(np.mean([d.q_values.mean() for d in dists])),
        "q_sharpening": float(np.mean([(d.q_values > 1.0).mean() for d in dists])),
        "kl": float(np.mean(kls)),
    }
