"""Reverse-mode autodiff: ops, dense/LSTM layers, Adam and gradient checks."""

import numpy as np
import pytest

from core.autograd import (
    AdamState,
    LstmCellState,
    LstmParams,
    Parameter,
    ShapeError,
    Tensor,
    adam_step,
    backward,
    clamp,
    dense_forward,
    gradient_check,
    log_softmax,
    lstm_step,
    matmul,
    mean,
    no_grad,
    sigmoid,
    softmax_cross_entropy,
    square,
    stack,
    sum_,
    tanh,
    update_rms,
)

TOL = 1e-4


def _sig(z):
    return 1.0 / (1.0 + np.exp(-z))


def test_dense_zero_weights_give_zero():
    W, b = Parameter(np.zeros((3, 4))), Parameter(np.zeros(3))
    out = dense_forward(Tensor(np.arange(4.0)), W, b, activation="tanh")
    assert np.array_equal(out.data, np.zeros(3))


def test_dense_identity_passes_input_through():
    x = np.array([0.3, -1.2, 2.0])
    out = dense_forward(Tensor(x), Parameter(np.eye(3)), Parameter(np.zeros(3)))
    assert np.allclose(out.data, x)


def test_dense_matches_direct_evaluation(rng):
    W, b, x = rng.normal(size=(5, 3)), rng.normal(size=5), rng.normal(size=3)
    out = dense_forward(Tensor(x), Parameter(W), Parameter(b), activation="sigmoid")
    assert np.allclose(out.data, _sig(W @ x + b), atol=1e-14)
    batch = rng.normal(size=(4, 3))
    out = dense_forward(Tensor(batch), Parameter(W), Parameter(b))
    assert np.allclose(out.data, batch @ W.T + b)


def test_dense_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        dense_forward(Tensor(np.ones(2)), Parameter(np.ones((3, 4))), Parameter(np.ones(3)))


def _zero_lstm(k, d):
    return LstmParams(Parameter(np.zeros((4 * k, d))), Parameter(np.zeros((4 * k, k))), Parameter(np.zeros(4 * k)))


def test_lstm_zero_weights_from_zero_state():
    out = lstm_step(Tensor(np.ones(2)), LstmCellState.zeros(3), _zero_lstm(3, 2))
    assert np.array_equal(out.c.data, np.zeros(3))
    assert np.array_equal(out.h.data, np.zeros(3))


def test_lstm_zero_weights_halve_the_cell():
    c0 = np.array([0.4, -2.0, 1.0])
    out = lstm_step(Tensor(np.ones(2)), LstmCellState(Tensor(np.zeros(3)), Tensor(c0)), _zero_lstm(3, 2))
    assert np.allclose(out.c.data, 0.5 * c0)
    assert np.allclose(out.h.data, 0.5 * np.tanh(0.5 * c0))


def test_lstm_matches_hand_evaluated_gates(rng):
    k, d = 4, 3
    Wx, Wh, b = rng.normal(size=(4 * k, d)), rng.normal(size=(4 * k, k)), rng.normal(size=4 * k)
    x, h, c = rng.normal(size=d), rng.normal(size=k), rng.normal(size=k)
    z = Wx @ x + Wh @ h + b
    i, f, g, o = _sig(z[:k]), _sig(z[k:2 * k]), np.tanh(z[2 * k:3 * k]), _sig(z[3 * k:])
    c_new = f * c + i * g
    out = lstm_step(Tensor(x), LstmCellState(Tensor(h), Tensor(c)),
                    LstmParams(Parameter(Wx), Parameter(Wh), Parameter(b)))
    assert np.allclose(out.c.data, c_new, atol=1e-14)
    assert np.allclose(out.h.data, o * np.tanh(c_new), atol=1e-14)


def test_linear_gradient_is_the_input():
    x = np.array([1.5, -2.0, 0.25])
    W = Parameter(np.ones((2, 3)))
    backward(sum_(matmul(W, Tensor(x))))
    assert np.allclose(W.grad, np.tile(x, (2, 1)))


def test_cross_entropy_gradient_is_p_minus_onehot(rng):
    z = Parameter(rng.normal(size=6))
    backward(softmax_cross_entropy(z, 2))
    p = np.exp(z.data - z.data.max())
    p /= p.sum()
    onehot = np.eye(6)[2]
    assert np.allclose(z.grad, p - onehot, atol=1e-14)


def test_log_softmax_is_stable_for_large_logits():
    out = log_softmax(Tensor(np.array([1000.0, 0.0, -1000.0])))
    assert np.all(np.isfinite(out.data))
    assert out.data[0] == pytest.approx(0.0, abs=1e-12)


def test_sigmoid_is_stable_at_extremes():
    out = sigmoid(Tensor(np.array([-800.0, 0.0, 800.0])))
    assert np.allclose(out.data, [0.0, 0.5, 1.0])


@pytest.mark.parametrize("seed", range(20))
def test_elementwise_ops_pass_gradient_check(seed):
    rng = np.random.default_rng(seed)
    a = Parameter(rng.normal(size=(3, 4)))
    b = Parameter(rng.normal(size=4))
    loss = lambda: mean(square(tanh(a * b + a - b)) + sigmoid(a))
    assert gradient_check(loss, [a, b]) <= TOL


@pytest.mark.parametrize("seed", range(20))
def test_matmul_and_cross_entropy_pass_gradient_check(seed):
    rng = np.random.default_rng(100 + seed)
    W = Parameter(rng.normal(size=(5, 3)))
    M = Parameter(rng.normal(size=(4, 5)))
    x = Tensor(rng.normal(size=3))
    target = int(rng.integers(0, 4))
    loss = lambda: softmax_cross_entropy(matmul(M, tanh(matmul(W, x))), target)
    assert gradient_check(loss, [W, M]) <= TOL


@pytest.mark.parametrize("seed", range(20))
def test_lstm_sequence_passes_gradient_check(seed):
    rng = np.random.default_rng(200 + seed)
    k, d = 3, 2
    params = LstmParams(Parameter(rng.normal(scale=0.5, size=(4 * k, d))),
                        Parameter(rng.normal(scale=0.5, size=(4 * k, k))),
                        Parameter(rng.normal(scale=0.5, size=4 * k)))
    xs = [Tensor(rng.normal(size=d)) for _ in range(3)]

    def loss():
        state = LstmCellState.zeros(k)
        hs = []
        for x in xs:
            state = lstm_step(x, state, params)
            hs.append(state.h)
        return sum_(square(stack(hs)))

    assert gradient_check(loss, [params.W_x, params.W_h, params.b]) <= TOL


@pytest.mark.parametrize("seed", range(20))
def test_indexing_and_clamp_pass_gradient_check(seed):
    rng = np.random.default_rng(300 + seed)
    E = Parameter(rng.normal(size=(5, 3)))
    idx = [int(i) for i in rng.integers(0, 5, size=4)]
    loss = lambda: sum_(clamp(E[idx], -0.9, 0.9) * E[idx]) + sum_(E.T[1])
    # clamp kinks are measure-zero for normal draws
    assert gradient_check(loss, [E]) <= TOL


def test_no_grad_records_nothing():
    W = Parameter(np.ones((2, 2)))
    with no_grad():
        out = matmul(W, Tensor(np.ones(2)))
    assert not out.requires_grad


def test_adam_zero_gradient_leaves_parameters():
    p = Parameter(np.array([1.0, -2.0]))
    adam_step(AdamState({"p": p}, lr=0.1))
    assert np.array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_moves_by_learning_rate():
    p = Parameter(np.array([0.5]))
    p.grad = np.array([3.0])
    adam_step(AdamState({"p": p}, lr=0.01))
    assert p.data[0] == pytest.approx(0.49, abs=1e-6)


def test_adam_converges_on_quadratic_bowl():
    x = Parameter(np.array([2.0]))
    adam = AdamState({"x": x}, lr=0.05)
    for _ in range(1000):
        backward(sum_(square(x)))
        adam_step(adam)
    assert abs(x.data[0]) < 1e-3


def test_adam_rejects_non_positive_rate():
    with pytest.raises(ValueError):
        AdamState({"p": Parameter(np.zeros(1))}, lr=0.0)


def test_adam_bounded_step_keeps_direction():
    a = Parameter(np.array([1.0, 1.0]))
    b = Parameter(np.array([0.0]))
    a.grad = np.array([3.0, -0.5])
    b.grad = np.array([2.0])
    adam_step(AdamState({"a": a, "b": b}, lr=0.1, max_update_rms=0.01))
    moved = np.concatenate([a.data - 1.0, b.data])
    assert np.allclose(moved, [-0.01, 0.01, -0.01], atol=1e-8)
    assert update_rms({"a": a.data - 1.0, "b": b.data}) == pytest.approx(0.01)


def test_adam_bound_above_step_changes_nothing():
    p = Parameter(np.array([0.5]))
    p.grad = np.array([3.0])
    adam_step(AdamState({"p": p}, lr=0.01, max_update_rms=1.0))
    assert p.data[0] == pytest.approx(0.49, abs=1e-6)


def test_adam_rejects_non_positive_bound():
    with pytest.raises(ValueError, match="max_update_rms"):
        AdamState({"p": Parameter(np.zeros(1))}, lr=0.1, max_update_rms=0.0)
