"""Q-network bounds, target sync, replay buffer and the TD loss."""

import numpy as np
import pytest

from core.autograd import AdamState, adam_step, backward, gradient_check
from core.environment import InvalidStateError
from core.pointer_model import PrefixFeaturizer, init_model_params
from core.q_module import (
    Q_FLOOR,
    QNetwork,
    ReplayBuffer,
    TargetNetwork,
    Transition,
    clamp_q,
    q_ceiling,
    q_value,
    q_values,
    sync_target,
    td_loss,
    td_target,
    td_targets,
)


@pytest.fixture()
def params():
    return init_model_params(5, np.random.default_rng(4), q_hidden=3)


def _transition(i=0, state=(0,), action=1, reward=0.4, terminal=False, n=4):
    return Transition(i, state, action, reward, state + (action,), terminal, n)


def test_ceiling_follows_discount():
    assert q_ceiling(0.95) == pytest.approx(20.0)
    assert q_ceiling(0.0) == 1.0
    with pytest.raises(ValueError):
        q_ceiling(1.0)


def test_clamp_keeps_values_in_bounds():
    out = clamp_q(np.array([-3.0, 0.0, 0.5, 25.0]), 0.95)
    assert out.min() >= Q_FLOOR and out.max() <= 20.0
    assert out[2] == 0.5


def test_untrained_q_is_near_one(params, rng):
    ctx = rng.uniform(-1, 1, size=(7, 5))
    vals = q_values(QNetwork.of(params), ctx, 0.95)
    assert vals.shape == (7,)
    assert np.all(np.abs(vals - 1.0) < 0.25)
    assert q_value(QNetwork.of(params), ctx[0], 0.95) == pytest.approx(vals[0])


def test_terminal_target_is_the_reward():
    assert td_target(0.3, [], True, 0.95) == 0.3


def test_target_bootstraps_from_max():
    assert td_target(0.3, [1.0, 2.0, 0.5], False, 0.5) == pytest.approx(1.3)


def test_zero_discount_target_is_the_reward():
    assert td_target(0.7, [5.0, 9.0], False, 0.0) == 0.7


def test_non_terminal_without_next_values_raises():
    with pytest.raises(InvalidStateError):
        td_target(0.1, [], False, 0.9)


def test_batch_targets_with_zero_discount_equal_rewards(params, small_instance):
    feat = PrefixFeaturizer(params, {0: small_instance.coords})
    batch = [_transition(reward=r, n=6) for r in (0.1, 0.5, 0.9)]
    targets = td_targets(batch, TargetNetwork.from_params(params), feat, 0.0)
    assert np.allclose(targets, [0.1, 0.5, 0.9])


def test_sync_copies_only_on_interval(params):
    target = TargetNetwork.from_params(params)
    params["q_w2"].data = params["q_w2"].data + 1.0
    sync_target(params, target, C=3, step=1)
    assert target.staleness == 1
    assert not np.array_equal(target.arrays["q_w2"], params["q_w2"].data)
    sync_target(params, target, C=3, step=3)
    assert target.staleness == 0
    assert np.array_equal(target.arrays["q_w2"], params["q_w2"].data)


def test_target_copy_is_independent(params):
    target = TargetNetwork.from_params(params)
    params["q_b1"].data[0] += 5.0
    assert target.arrays["q_b1"][0] != params["q_b1"].data[0]


def test_buffer_not_ready_returns_none(rng):
    buf = ReplayBuffer(10)
    buf.push(_transition())
    assert buf.sample(2, rng) is None


def test_buffer_evicts_oldest(rng):
    buf = ReplayBuffer(3)
    for r in (0.1, 0.2, 0.3, 0.4):
        buf.push(_transition(reward=r))
    assert [t.reward for t in buf] == [0.2, 0.3, 0.4]
    assert len(buf.sample(3, rng)) == 3


def test_transition_rejects_bad_reward_and_visited_action():
    with pytest.raises(ValueError):
        _transition(reward=1.5)
    with pytest.raises(ValueError):
        Transition(0, (0, 1), 1, 0.2, (0, 1, 1), False, 4)


def test_td_loss_only_touches_q_parameters(params, small_instance):
    feat = PrefixFeaturizer(params, {0: small_instance.coords})
    batch = [_transition(state=(0,), action=2, n=6), _transition(state=(0, 2), action=5, n=6)]
    loss = td_loss(batch, params, TargetNetwork.from_params(params), feat, 0.95)
    backward(loss)
    assert loss.item() >= 0
    assert np.any(params["q_W1"].grad != 0)
    assert np.all(params["att_W1"].grad == 0)


def test_td_loss_passes_gradient_check(small_instance):
    p = init_model_params(4, np.random.default_rng(9), q_hidden=3, scale=0.5)
    feat = PrefixFeaturizer(p, {0: small_instance.coords})
    target = TargetNetwork.from_params(p)
    batch = [_transition(state=(0,), action=3, reward=0.6, n=6),
             _transition(state=(0, 3, 1), action=4, reward=0.2, n=6)]
    loss = lambda: td_loss(batch, p, target, feat, 0.9)
    assert gradient_check(loss, list(p.q().values())) <= 1e-4


def test_tracking_featurizer_lets_td_reach_attention(small_instance):
    p = init_model_params(4, np.random.default_rng(9), q_hidden=3)
    feat = PrefixFeaturizer(p, {0: small_instance.coords}, track_grad=True)
    backward(td_loss([_transition(state=(0, 1), action=2, n=6)], p, TargetNetwork.from_params(p), feat, 0.9))
    assert np.any(p["att_W1"].grad != 0)


def test_single_transition_loss_by_hand(params, small_instance):
    feat = PrefixFeaturizer(params, {0: small_instance.coords})
    params["q_w2"].data = np.zeros_like(params["q_w2"].data)
    params["q_b2"].data = np.array([0.5])
    target = TargetNetwork.from_params(params)
    target.arrays["q_b2"] = np.array([1.0])
    loss = td_loss([_transition(reward=0.5, n=6)], params, target, feat, 0.95)
    assert loss.item() == pytest.approx(0.95 ** 2, abs=1e-12)


def test_one_small_step_lowers_the_loss(params, small_instance):
    feat = PrefixFeaturizer(params, {0: small_instance.coords})
    target = TargetNetwork.from_params(params)
    batch = [_transition(state=(0,), action=2, reward=0.9, n=6),
             _transition(state=(0, 2), action=4, reward=0.1, n=6),
             _transition(state=(0, 2, 4, 1, 3), action=5, reward=0.6, terminal=True, n=6)]
    before = td_loss(batch, params, target, feat, 0.95)
    backward(before)
    adam_step(AdamState(params.q(), lr=1e-4))
    after = td_loss(batch, params, target, feat, 0.95)
    assert after.item() < before.item()


def test_uniform_sampling_frequency():
    buf = ReplayBuffer(4)
    for r in (0.1, 0.2, 0.3, 0.4):
        buf.push(_transition(reward=r))
    rng = np.random.default_rng(2024)
    counts = {}
    for _ in range(10_000):
        (picked,) = buf.sample(1, rng)
        counts[picked.reward] = counts.get(picked.reward, 0) + 1
    assert sorted(counts) == [0.1, 0.2, 0.3, 0.4]
    assert all(abs(c - 2500) <= 150 for c in counts.values())


def test_full_batch_returns_each_item_once(rng):
    buf = ReplayBuffer(5)
    for r in (0.1, 0.2, 0.3, 0.4, 0.5):
        buf.push(_transition(reward=r))
    batch = buf.sample(5, rng)
    assert sorted(t.reward for t in batch) == [0.1, 0.2, 0.3, 0.4, 0.5]
