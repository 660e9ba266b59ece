"""Minimal reverse-mode autodiff over numpy arrays.

Each forward op returns a Tensor that remembers its parents and a closure
mapping the upstream gradient to parent gradients. The tape is rebuilt on
every forward pass; Tensor.backward() walks it once in reverse topological
order. Inside `no_grad()` ops skip recording, which is what rollouts and
target-network evaluations use.

Also here: dense layer, LSTM cell, Adam and a central finite-difference check.
Everything is float64.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

INIT_SCALE = 0.08


class ShapeError(ValueError):
    """Raised when operand shapes do not line up."""


_mode = threading.local()


def grad_enabled() -> bool:
    return getattr(_mode, "enabled", True)


@contextmanager
def no_grad():
    prev = grad_enabled()
    _mode.enabled = False
    try:
        yield
    finally:
        _mode.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, parents: Tuple["Tensor", ...] = (),
                 backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None,
                 name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    @property
    def T(self) -> "Tensor":
        return _make(self.data.T, (self,), lambda g: (g.T,))

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return _make(-self.data, (self,), lambda g: (-g,))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def backward(self) -> None:
        backward(self)


class Parameter(Tensor):
    """Trainable leaf. `grad` always has the value's shape."""

    __slots__ = ()

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, dtype=np.float64, copy=True), requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Tuple[Tensor, ...], backward_fn) -> Tensor:
    needs = grad_enabled() and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, parents=parents, backward=backward_fn)


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from e


# ─── Elementwise ops ─────────────────────────────────────────────────────────

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _stable_sigmoid(np.atleast_1d(x.data)).reshape(x.shape)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


def square(x) -> Tensor:
    x = as_tensor(x)
    return _make(x.data ** 2, (x,), lambda g: (2.0 * g * x.data,))


def clamp(x, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes only where the input was inside."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


# ─── Reductions and shape ops ────────────────────────────────────────────────

def sum_(x, axis=None) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _make(x.data.sum(axis=axis), (x,), bw)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else x.shape[axis]
    return mul(sum_(x, axis=axis), 1.0 / count)


def take(x, idx) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        out = np.zeros_like(x.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(x.data[idx], (x,), bw)


def stack(tensors: Sequence[Tensor]) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack needs equal shapes, got {sorted(shapes)}")
    data = np.stack([t.data for t in tensors])
    return _make(data, tuple(tensors), lambda g: tuple(g[i] for i in range(len(tensors))))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise ShapeError(f"matmul supports 1-D/2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def bw(g):
        if A.ndim == 2 and B.ndim == 2:
            return g @ B.T, A.T @ g
        if A.ndim == 2:
            return np.outer(g, B), A.T @ g
        if B.ndim == 2:
            return B @ g, np.outer(A, g)
        return g * B, g * A

    return _make(A @ B, (a, b), bw)


def log_softmax(x) -> Tensor:
    """Log-softmax along the last axis with max subtraction."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    p = np.exp(y)
    return _make(y, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def softmax_cross_entropy(logits, target: int) -> Tensor:
    """-log softmax(logits)[target] for a 1-D logit vector."""
    return -take(log_softmax(logits), int(target))


# ─── Backward pass ───────────────────────────────────────────────────────────

def _topo(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    seen = set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's `grad`."""
    if not loss.requires_grad:
        return
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else np.array(pg, dtype=np.float64)


# ─── Layers ──────────────────────────────────────────────────────────────────

_ACTIVATIONS = {"none": lambda z: z, "tanh": tanh, "sigmoid": sigmoid}


def dense_forward(x, W: Tensor, b: Tensor, activation: str = "none") -> Tensor:
    """activation(W x + b). x may be a vector or a batch of row vectors."""
    if activation not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    x = as_tensor(x)
    if x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ShapeError(f"dense shapes: x {x.shape}, W {W.shape}, b {b.shape}")
    z = matmul(W, x) if x.data.ndim == 1 else matmul(x, W.T)
    return _ACTIVATIONS[activation](add(z, b))


@dataclass
class LstmCellState:
    h: Tensor
    c: Tensor

    def __post_init__(self):
        if self.h.shape != self.c.shape:
            raise ShapeError(f"h {self.h.shape} and c {self.c.shape} differ")

    @property
    def size(self) -> int:
        return self.h.shape[-1]

    @classmethod
    def zeros(cls, k: int) -> "LstmCellState":
        return cls(Tensor(np.zeros(k)), Tensor(np.zeros(k)))


@dataclass
class LstmParams:
    W_x: Tensor   # (4k, d)
    W_h: Tensor   # (4k, k)
    b: Tensor     # (4k,)

    @property
    def hidden(self) -> int:
        return self.W_h.shape[1]


def lstm_step(x, state: LstmCellState, params: LstmParams) -> LstmCellState:
    """One standard LSTM update, gate order i, f, g, o."""
    x = as_tensor(x)
    k = params.hidden
    if params.W_x.shape[1] != x.shape[-1] or state.size != k or params.W_h.shape[0] != 4 * k:
        raise ShapeError(
            f"lstm shapes: x {x.shape}, W_x {params.W_x.shape}, W_h {params.W_h.shape}, h {state.h.shape}"
        )
    z = matmul(params.W_x, x) + matmul(params.W_h, state.h) + params.b
    i = sigmoid(z[0:k])
    f = sigmoid(z[k:2 * k])
    g = tanh(z[2 * k:3 * k])
    o = sigmoid(z[3 * k:4 * k])
    c = f * state.c + i * g
    h = o * tanh(c)
    return LstmCellState(h=h, c=c)


# ─── Optimizer ───────────────────────────────────────────────────────────────

@dataclass
class AdamState:
    """Adam moments for one parameter group.

    `max_update_rms` bounds the root-mean-square of a whole step across the
    group; a step whose RMS exceeds it is scaled down uniformly, so the update
    keeps Adam's direction at a bounded size.
    """
    params: Dict[str, Parameter]
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_update_rms: Optional[float] = None
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.max_update_rms is not None and self.max_update_rms <= 0:
            raise ValueError(f"max_update_rms must be positive, got {self.max_update_rms}")
        for name, p in self.params.items():
            self.m.setdefault(name, np.zeros_like(p.data))
            self.v.setdefault(name, np.zeros_like(p.data))


def update_rms(updates: Dict[str, np.ndarray]) -> float:
    count = sum(u.size for u in updates.values())
    if count == 0:
        return 0.0
    return float(np.sqrt(sum(float(np.sum(u * u)) for u in updates.values()) / count))


def adam_step(adam: AdamState) -> Dict[str, Parameter]:
    """Bias-corrected Adam update in place, then clear the grads."""
    adam.step += 1
    b1, b2 = adam.beta1, adam.beta2
    c1 = 1.0 - b1 ** adam.step
    c2 = 1.0 - b2 ** adam.step
    updates = {}
    for name, p in adam.params.items():
        g = p.grad
        m = adam.m[name] = b1 * adam.m[name] + (1.0 - b1) * g
        v = adam.v[name] = b2 * adam.v[name] + (1.0 - b2) * g * g
        updates[name] = adam.lr * (m / c1) / (np.sqrt(v / c2) + adam.eps)
    scale = 1.0
    if adam.max_update_rms is not None:
        rms = update_rms(updates)
        if rms > adam.max_update_rms:
            scale = adam.max_update_rms / rms
    for name, p in adam.params.items():
        p.data = p.data - scale * updates[name]
        p.zero_grad()
    return adam.params


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


def init_uniform(shape, rng: np.random.Generator, scale: float = INIT_SCALE) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


# ─── Gradient check ──────────────────────────────────────────────────────────

REL_FLOOR = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def gradient_check(loss_fn: Callable[[], Tensor], params: Sequence[Parameter], eps: float = 1e-5) -> float:
    """Max relative error of backward() against central differences over `params`."""
    zero_grads(params)
    backward(loss_fn())
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    with no_grad():
        for p, a in zip(params, analytic):
            numeric = np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = loss_fn().item()
                flat[i] = orig - eps
                down = loss_fn().item()
                flat[i] = orig
                numeric.reshape(-1)[i] = (up - down) / (2 * eps)
            worst = max(worst, relative_error(a, numeric))
    zero_grads(params)
    return worst
