"""PQN training loop, the supervised pointer baseline, rollouts and evaluation.

Both variants run through one loop with identical initial sequence weights
(same seed), the same episode schedule and the same per-epoch supervised pass
toward benchmark tours. The PQN variant tempers the attention with Q-values
and runs a replayed TD update after every environment step; the pointer
baseline acts on plain softmax and never touches the Q-network.

Epoch budget: episodes start while fewer than `steps_per_epoch` steps have run
in the epoch, and an episode that starts always finishes, so an epoch may run
up to n - 2 steps over budget.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.autograd import AdamState, Tensor, adam_step, backward, mean, softmax_cross_entropy, stack
from core.baselines import benchmark_tour
from core.environment import EpisodeState, feasible_actions, reset, step, to_tour
from core.pointer_model import ModelParams, PrefixFeaturizer, decode_state, encode, init_model_params, score_actions
from core.policy import (
    ActionDistribution,
    levenshtein,
    policy_report,
    select_action,
    tempered_softmax,
)
from core.q_module import (
    QNetwork,
    ReplayBuffer,
    TargetNetwork,
    Transition,
    q_values,
    sync_target,
    td_loss,
)
from core.tsp import Tour, TspInstance, ensure_valid, perturb_instance, tour_cost

logger = logging.getLogger(__name__)

TD_SCOPES = ("q_only", "all")
SUP_POLICIES = ("tempered", "plain")


@dataclass(frozen=True)
class TrainConfig:
    """One training run. Defaults follow the published setup where it states them."""
    hidden: int = 128
    q_hidden: Optional[int] = None       # None -> same as hidden
    batch_size: int = 64
    lr_ptr: float = 0.1
    lr_q: float = 0.01
    gamma: float = 0.95
    epochs: int = 30
    steps_per_epoch: int = 100
    sync_c: int = 100
    replay_capacity: int = 10_000
    sup_steps: int = 20                  # supervised Adam steps at the end of each epoch
    ptr_update_rms: Optional[float] = 1e-3   # bound on the RMS of one sequence-model Adam step, None = unbounded
    td_scope: str = "q_only"             # "all" lets TD gradients reach encoder/decoder/attention
    sup_policy: str = "tempered"         # PQN cross-entropy on pi~ ("tempered") or plain softmax
    init_scale: float = 0.08
    start: int = 0
    seed: int = 0
    eval_workers: int = 1

    def validate(self, n: Optional[int] = None) -> "TrainConfig":
        if self.hidden < 1 or (self.q_hidden is not None and self.q_hidden < 1):
            raise ValueError(f"hidden sizes must be positive, got {self.hidden}/{self.q_hidden}")
        if not 0 <= self.gamma < 1:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.lr_ptr <= 0 or self.lr_q <= 0:
            raise ValueError(f"learning rates must be positive, got lr_ptr={self.lr_ptr} lr_q={self.lr_q}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.replay_capacity < 1:
            raise ValueError(f"replay_capacity must be >= 1, got {self.replay_capacity}")
        if self.replay_capacity < self.batch_size:
            raise ValueError(f"replay_capacity={self.replay_capacity} can never fill a batch of {self.batch_size}")
        if self.sync_c < 1:
            raise ValueError(f"sync_c must be >= 1, got {self.sync_c}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.sup_steps < 0:
            raise ValueError(f"sup_steps must be >= 0, got {self.sup_steps}")
        if self.ptr_update_rms is not None and self.ptr_update_rms <= 0:
            raise ValueError(f"ptr_update_rms must be positive or None, got {self.ptr_update_rms}")
        if self.td_scope not in TD_SCOPES:
            raise ValueError(f"td_scope must be one of {TD_SCOPES}, got {self.td_scope!r}")
        if self.sup_policy not in SUP_POLICIES:
            raise ValueError(f"sup_policy must be one of {SUP_POLICIES}, got {self.sup_policy!r}")
        if self.init_scale <= 0:
            raise ValueError(f"init_scale must be positive, got {self.init_scale}")
        if self.eval_workers < 1:
            raise ValueError(f"eval_workers must be >= 1, got {self.eval_workers}")
        if n is not None:
            if self.steps_per_epoch < n - 1:
                raise ValueError(f"steps_per_epoch={self.steps_per_epoch} shorter than one episode ({n - 1} steps)")
            if not 0 <= self.start < n:
                raise ValueError(f"start city {self.start} out of range for n={n}")
        elif self.steps_per_epoch < 1:
            raise ValueError(f"steps_per_epoch must be >= 1, got {self.steps_per_epoch}")
        return self

    def with_overrides(self, **changes) -> "TrainConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


@dataclass(frozen=True)
class PerturbationSchedule:
    """Epochs first..last (inclusive) train on costs scaled by U(alpha, beta) per edge."""
    first: int
    last: int
    alpha: float = 0.9
    beta: float = 1.1
    seed: int = 0

    def active(self, epoch: int) -> bool:
        return self.first <= epoch <= self.last

    def apply(self, instance: TspInstance, epoch: int, index: int) -> TspInstance:
        draw = int(np.random.SeedSequence([self.seed, epoch, index]).generate_state(1)[0])
        return perturb_instance(instance, self.alpha, self.beta, draw)


@dataclass
class EpochRecord:
    epoch: int
    J_mean: float
    entropy_mean: float
    Q_mean: float
    td_loss: float
    sup_loss: float
    sigma_B: float
    kl_mean: float = 0.0
    q_sharpening: float = 0.0
    td_updates: int = 0
    episodes: int = 0
    steps: int = 0
    perturbed: bool = False


@dataclass
class StepRecord:
    step: int
    epoch: int
    reward: float
    entropy: float
    q_mean: float
    q_sharpening: float
    td_loss: float = math.nan


@dataclass
class MethodResult:
    """Greedy evaluation of one method over a set of instances."""
    name: str
    tours: List[Tour]
    costs: List[float]
    sigmas: List[int]

    @property
    def J_mean(self) -> float:
        return float(np.mean(self.costs)) if self.costs else 0.0

    @property
    def sigma_mean(self) -> float:
        return float(np.mean(self.sigmas)) if self.sigmas else 0.0

    @property
    def sigma_total(self) -> int:
        return int(np.sum(self.sigmas))

    def to_dict(self) -> dict:
        return {
            "J_mean": self.J_mean,
            "sigma_B_mean": self.sigma_mean,
            "sigma_B_total": self.sigma_total,
            "per_instance": [
                {"J": c, "sigma_B": s, "tour": list(t.order)}
                for t, c, s in zip(self.tours, self.costs, self.sigmas)
            ],
        }


@dataclass
class TrainingHistory:
    method: str
    records: List[EpochRecord] = field(default_factory=list)
    steps: List[StepRecord] = field(default_factory=list)
    perturb_window: Optional[Tuple[int, int]] = None
    evaluation: Optional[MethodResult] = None

    def epoch_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.records])

    def step_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(s) for s in self.steps])

    def series(self, column: str) -> List[float]:
        return [getattr(r, column) for r in self.records]


@dataclass
class PolicyModel:
    """Parameters plus how to act with them."""
    params: ModelParams
    gamma: float = 0.95
    tempered: bool = True


@dataclass
class RolloutResult:
    tour: Tour
    distributions: List[ActionDistribution]
    rewards: List[float]


def _distribution(model: PolicyModel, featurizer: PrefixFeaturizer, instance_id: int,
                  state: EpisodeState) -> ActionDistribution:
    actions = feasible_actions(state)
    logits, contexts = featurizer.contexts(instance_id, state.visited, actions)
    if model.tempered:
        q = q_values(QNetwork.of(model.params), contexts, model.gamma)
    else:
        q = np.ones(len(actions))
    return tempered_softmax(dict(zip(actions, logits.data.tolist())), dict(zip(actions, q.tolist())))


def rollout(model: PolicyModel, instance: TspInstance, mode: str = "greedy",
            rng: Optional[np.random.Generator] = None, coords: Optional[np.ndarray] = None,
            start: int = 0) -> RolloutResult:
    """One full episode. `coords` feeds the encoder when `instance` carries perturbed costs only."""
    if mode == "sample" and rng is None:
        raise ValueError("sampling rollouts need an rng")
    source = coords if coords is not None else instance.coords
    featurizer = PrefixFeaturizer(model.params, {0: source})
    state = reset(instance, start)
    dists: List[ActionDistribution] = []
    rewards: List[float] = []
    while not state.terminal:
        dist = _distribution(model, featurizer, 0, state)
        action = select_action(dist, mode, rng)
        outcome = step(instance, state, action)
        dists.append(dist)
        rewards.append(outcome.reward)
        state = outcome.next_state
    return RolloutResult(tour=to_tour(state), distributions=dists, rewards=rewards)


def supervised_loss(params: ModelParams, coords: Sequence[np.ndarray], tours: Sequence[Tour],
                    gamma: float, tempered: bool) -> Tensor:
    """Cross-entropy along the benchmark prefix toward the benchmark next city, averaged over all steps.

    With `tempered`, logits are scaled by detached Q-values so the loss sees the
    policy the model actually acts with.
    """
    qnet = QNetwork.of(params)
    terms = []
    for xy, tour in zip(coords, tours):
        enc = encode(xy, params)
        order = tour.order
        prev = None
        for t in range(len(order) - 1):
            state = EpisodeState(order[:t + 1], len(order))
            prev = decode_state(state, enc, params, prev)
            actions = feasible_actions(state)
            logits, contexts = score_actions(prev.h, enc, actions, params.attention)
            if tempered:
                logits = logits * Tensor(q_values(qnet, contexts.detach(), gamma))
            terms.append(softmax_cross_entropy(logits, actions.index(order[t + 1])))
    return mean(stack(terms))


def _check_inputs(instances: Sequence[TspInstance], benchmark_tours: Sequence, config: TrainConfig) -> List[Tour]:
    if not instances:
        raise ValueError("training needs at least one instance")
    if len(benchmark_tours) != len(instances):
        raise ValueError(f"{len(benchmark_tours)} benchmark tours for {len(instances)} instances")
    for i, inst in enumerate(instances):
        if inst.coords is None:
            raise ValueError(f"training instance {i} has no coordinates")
    config.validate(max(inst.n for inst in instances))
    return [ensure_valid(inst, tour, start=config.start) for inst, tour in zip(instances, benchmark_tours)]


def _train(instances: Sequence[TspInstance], benchmark_tours: Sequence, config: TrainConfig, method: str,
           perturbation: Optional[PerturbationSchedule] = None) -> Tuple[ModelParams, TrainingHistory]:
    bench = _check_inputs(instances, benchmark_tours, config)
    if perturbation is not None and not (0 <= perturbation.first <= perturbation.last < config.epochs):
        raise ValueError(
            f"perturbation epochs [{perturbation.first}, {perturbation.last}] outside 0..{config.epochs - 1}"
        )
    is_pqn = method == "pqn"
    init_ss, policy_ss, replay_ss = np.random.SeedSequence(config.seed).spawn(3)
    params = init_model_params(config.hidden, np.random.default_rng(init_ss),
                               q_hidden=config.q_hidden, scale=config.init_scale)
    policy_rng = np.random.default_rng(policy_ss)
    replay_rng = np.random.default_rng(replay_ss)

    coords_by_id = {i: inst.coords for i, inst in enumerate(instances)}
    featurizer = PrefixFeaturizer(params, coords_by_id)
    model = PolicyModel(params, gamma=config.gamma, tempered=is_pqn)
    target = TargetNetwork.from_params(params)
    buffer = ReplayBuffer(config.replay_capacity)
    seq_opt = AdamState(params.sequence(), lr=config.lr_ptr, max_update_rms=config.ptr_update_rms)
    td_params = params.q() if config.td_scope == "q_only" else params.all()
    q_opt = AdamState(td_params, lr=config.lr_q)
    sup_tempered = is_pqn and config.sup_policy == "tempered"

    history = TrainingHistory(method=method,
                              perturb_window=(perturbation.first, perturbation.last) if perturbation else None)
    global_step = 0
    cursor = 0
    for epoch in range(config.epochs):
        perturbed = perturbation is not None and perturbation.active(epoch)
        if perturbation is not None and epoch in (perturbation.first, perturbation.last + 1):
            logger.info(f"[{method}] perturbation window {'opens' if perturbed else 'closes'} at epoch {epoch}")
        env_instances = [perturbation.apply(inst, epoch, i) for i, inst in enumerate(instances)] if perturbed \
            else list(instances)

        costs, sigmas, reports, td_losses = [], [], [], []
        steps_done = 0
        while steps_done < config.steps_per_epoch:
            idx = cursor % len(instances)
            cursor += 1
            env = env_instances[idx]
            state = reset(env, config.start)
            dists = []
            while not state.terminal:
                dist = _distribution(model, featurizer, idx, state)
                action = select_action(dist, "sample", policy_rng)
                outcome = step(env, state, action)
                dists.append(dist)
                global_step += 1
                steps_done += 1
                step_td = math.nan
                if is_pqn:
                    buffer.push(Transition(idx, state.visited, action, outcome.reward,
                                           outcome.next_state.visited, outcome.terminal, env.n))
                    batch = buffer.sample(config.batch_size, replay_rng)
                    if batch is not None:
                        feat = featurizer if config.td_scope == "q_only" \
                            else PrefixFeaturizer(params, coords_by_id, track_grad=True)
                        loss = td_loss(batch, params, target, feat, config.gamma)
                        backward(loss)
                        adam_step(q_opt)
                        if config.td_scope == "all":
                            featurizer.invalidate()
                        step_td = loss.item()
                        td_losses.append(step_td)
                    sync_target(params, target, config.sync_c, global_step)
                summary = policy_report([dist])
                history.steps.append(StepRecord(
                    step=global_step, epoch=epoch, reward=outcome.reward, entropy=summary["entropy"],
                    q_mean=summary["q_mean"], q_sharpening=summary["q_sharpening"], td_loss=step_td,
                ))
                state = outcome.next_state
            tour = to_tour(state)
            costs.append(tour_cost(env, tour))
            sigmas.append(levenshtein(tour, bench[idx]))
            reports.append(policy_report(dists))

        sup_losses = []
        for _ in range(config.sup_steps):
            loss = supervised_loss(params, [inst.coords for inst in instances], bench, config.gamma, sup_tempered)
            backward(loss)
            adam_step(seq_opt)
            sup_losses.append(loss.item())
        if sup_losses:
            featurizer.invalidate()

        record = EpochRecord(
            epoch=epoch,
            J_mean=float(np.mean(costs)),
            entropy_mean=float(np.mean([r["entropy"] for r in reports])),
            Q_mean=float(np.mean([r["q_mean"] for r in reports])),
            td_loss=float(np.mean(td_losses)) if td_losses else 0.0,
            sup_loss=float(np.mean(sup_losses)) if sup_losses else 0.0,
            sigma_B=float(np.mean(sigmas)),
            kl_mean=float(np.mean([r["kl"] for r in reports])),
            q_sharpening=float(np.mean([r["q_sharpening"] for r in reports])),
            td_updates=len(td_losses),
            episodes=len(costs),
            steps=steps_done,
            perturbed=perturbed,
        )
        history.records.append(record)
        logger.info(
            f"[{method}] epoch {epoch}: J={record.J_mean:.4f} H={record.entropy_mean:.4f} "
            f"Q={record.Q_mean:.3f} td={record.td_loss:.5f} sup={record.sup_loss:.4f} "
            f"sigma_B={record.sigma_B:.2f}{' (perturbed)' if perturbed else ''}"
        )

    params.target_arrays = dict(target.arrays) if is_pqn else None
    return params, history


def train_pqn(instances: Sequence[TspInstance], benchmark_tours: Sequence, config: TrainConfig,
              perturbation: Optional[PerturbationSchedule] = None) -> Tuple[ModelParams, TrainingHistory]:
    """Q-tempered pointer training with replayed TD updates and a per-epoch supervised pass."""
    return _train(instances, benchmark_tours, config, "pqn", perturbation)


def train_ptrnet_supervised(instances: Sequence[TspInstance], benchmark_tours: Sequence, config: TrainConfig,
                            perturbation: Optional[PerturbationSchedule] = None) -> Tuple[ModelParams, TrainingHistory]:
    """Same schedule and architecture, plain softmax policy, no TD loss."""
    return _train(instances, benchmark_tours, config, "ptrnet", perturbation)


def evaluate_policy(model: PolicyModel, instances: Sequence[TspInstance], benchmark_tours: Sequence,
                    name: str, workers: int = 1) -> MethodResult:
    """Greedy rollouts over instances; rollouts are pure so they may fan out across threads."""
    def _one(inst):
        return rollout(model, inst, mode="greedy").tour

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            tours = list(pool.map(_one, instances))
    else:
        tours = [_one(inst) for inst in instances]
    return MethodResult(
        name=name,
        tours=tours,
        costs=[tour_cost(inst, t) for inst, t in zip(instances, tours)],
        sigmas=[levenshtein(t, b) for t, b in zip(tours, benchmark_tours)],
    )


def evaluate_methods(instances: Sequence[TspInstance], benchmark_tours: Sequence[Tour], config: TrainConfig,
                     pqn_params: Optional[ModelParams] = None,
                     ptr_params: Optional[ModelParams] = None) -> Dict[str, MethodResult]:
    """Table-style comparison: each trained model greedily, plus the benchmark itself."""
    results: Dict[str, MethodResult] = {}
    if pqn_params is not None:
        results["pqn"] = evaluate_policy(PolicyModel(pqn_params, config.gamma, tempered=True),
                                         instances, benchmark_tours, "pqn", config.eval_workers)
    if ptr_params is not None:
        results["ptrnet"] = evaluate_policy(PolicyModel(ptr_params, config.gamma, tempered=False),
                                            instances, benchmark_tours, "ptrnet", config.eval_workers)
    results["benchmark"] = MethodResult(
        name="benchmark",
        tours=list(benchmark_tours),
        costs=[tour_cost(inst, t) for inst, t in zip(instances, benchmark_tours)],
        sigmas=[0] * len(benchmark_tours),
    )
    return results


@dataclass
class PerturbationRun:
    """Both methods trained under one perturbation schedule, evaluated on clean instances."""
    window: Tuple[int, int]
    bounds: Tuple[float, float]
    params: Dict[str, ModelParams]
    histories: Dict[str, TrainingHistory]
    evaluation: Dict[str, MethodResult]


def run_perturbation_protocol(instances: Sequence[TspInstance], config: TrainConfig,
                              perturb_epochs: Tuple[int, int] = (5, 10), alpha: float = 0.9, beta: float = 1.1,
                              seed: int = 0, benchmark_tours: Optional[Sequence[Tour]] = None,
                              eval_instances: Optional[Sequence[TspInstance]] = None,
                              benchmark: str = "two_opt") -> PerturbationRun:
    """PQN and the pointer baseline trained with perturbed costs inside the window.

    Both see the same perturbed draws; afterwards each is evaluated greedily on
    unperturbed instances next to the benchmark tours.
    """
    first, last = perturb_epochs
    if not 0 <= first <= last < config.epochs:
        raise ValueError(f"perturbation epochs [{first}, {last}] outside 0..{config.epochs - 1}")
    if benchmark_tours is None:
        benchmark_tours = [benchmark_tour(inst, benchmark) for inst in instances]
    schedule = PerturbationSchedule(first, last, alpha, beta, seed)
    pqn_params, pqn_history = train_pqn(instances, benchmark_tours, config, perturbation=schedule)
    ptr_params, ptr_history = train_ptrnet_supervised(instances, benchmark_tours, config, perturbation=schedule)

    eval_set = list(eval_instances) if eval_instances is not None else list(instances)
    eval_bench = benchmark_tours if eval_instances is None else [benchmark_tour(i, benchmark) for i in eval_set]
    results = evaluate_methods(eval_set, eval_bench, config, pqn_params=pqn_params, ptr_params=ptr_params)
    pqn_history.evaluation = results["pqn"]
    ptr_history.evaluation = results["ptrnet"]
    for name, r in results.items():
        logger.info(f"[perturbed] {name:10s} J={r.J_mean:.4f} sigma_B={r.sigma_mean:.2f}")
    return PerturbationRun(
        window=(first, last),
        bounds=(alpha, beta),
        params={"pqn": pqn_params, "ptrnet": ptr_params},
        histories={"pqn": pqn_history, "ptrnet": ptr_history},
        evaluation=results,
    )
