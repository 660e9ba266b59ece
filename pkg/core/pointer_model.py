"""Pointer model: coordinate encoder, decoder LSTM and additive attention.

    encode:   x_a = W_in coords[a] + b_in, LSTM over a = 0..n-1, e_a = h_a
    decode:   h_t = LSTM(e_current (+ start token at t = 0), h_{t-1}), h_{-1} = encoder final state
    attend:   c_ta = tanh(W1 h_t + W2 e_a),  u_ta = v . c_ta

Only feasible cities are scored; visited cities never get a logit. The
Q-network parameters live in the same ModelParams so checkpoints carry the
whole model, but they are grouped separately for the two optimizers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from core.autograd import (
    INIT_SCALE,
    LstmCellState,
    LstmParams,
    Parameter,
    Tensor,
    as_tensor,
    dense_forward,
    init_uniform,
    lstm_step,
    matmul,
    no_grad,
    stack,
    tanh,
)
from core.environment import EpisodeState, InvalidStateError
from core.tsp import TspInstance

SEQUENCE_PARAMS = (
    "embed_W", "embed_b",
    "enc_Wx", "enc_Wh", "enc_b",
    "dec_Wx", "dec_Wh", "dec_b", "dec_start",
    "att_W1", "att_W2", "att_v",
)
Q_PARAMS = ("q_W1", "q_b1", "q_w2", "q_b2")

# Output bias starts at 1 so an untrained Q-network leaves the attention
# temperature neutral (Q = 1 means plain softmax).
Q_OUTPUT_BIAS_INIT = 1.0


@dataclass
class ModelParams:
    tensors: Dict[str, Parameter]
    target_arrays: Optional[Dict[str, np.ndarray]] = None   # frozen Q copy after PQN training

    @property
    def hidden(self) -> int:
        return int(self.tensors["att_v"].shape[0])

    @property
    def q_hidden(self) -> int:
        return int(self.tensors["q_b1"].shape[0])

    def __getitem__(self, name: str) -> Parameter:
        return self.tensors[name]

    def sequence(self) -> Dict[str, Parameter]:
        return {n: self.tensors[n] for n in SEQUENCE_PARAMS}

    def q(self) -> Dict[str, Parameter]:
        return {n: self.tensors[n] for n in Q_PARAMS}

    def all(self) -> Dict[str, Parameter]:
        return dict(self.tensors)

    @property
    def encoder(self) -> LstmParams:
        t = self.tensors
        return LstmParams(t["enc_Wx"], t["enc_Wh"], t["enc_b"])

    @property
    def decoder(self) -> LstmParams:
        t = self.tensors
        return LstmParams(t["dec_Wx"], t["dec_Wh"], t["dec_b"])

    @property
    def attention(self) -> "AttentionParams":
        t = self.tensors
        return AttentionParams(t["att_W1"], t["att_W2"], t["att_v"])

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.tensors.items()}

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "ModelParams":
        missing = set(SEQUENCE_PARAMS + Q_PARAMS) - set(arrays)
        if missing:
            raise ValueError(f"missing parameters: {sorted(missing)}")
        return cls({n: Parameter(arrays[n], name=n) for n in SEQUENCE_PARAMS + Q_PARAMS})


def init_model_params(hidden: int, rng: np.random.Generator, q_hidden: Optional[int] = None,
                      scale: float = INIT_SCALE) -> ModelParams:
    """Uniform U(-scale, scale) init for every weight."""
    k = int(hidden)
    hq = int(q_hidden or hidden)
    shapes = {
        "embed_W": (k, 2), "embed_b": (k,),
        "enc_Wx": (4 * k, k), "enc_Wh": (4 * k, k), "enc_b": (4 * k,),
        "dec_Wx": (4 * k, k), "dec_Wh": (4 * k, k), "dec_b": (4 * k,), "dec_start": (k,),
        "att_W1": (k, k), "att_W2": (k, k), "att_v": (k,),
        "q_W1": (hq, k), "q_b1": (hq,), "q_w2": (hq,), "q_b2": (1,),
    }
    arrays = {name: init_uniform(shape, rng, scale) for name, shape in shapes.items()}
    arrays["q_b2"] = arrays["q_b2"] + Q_OUTPUT_BIAS_INIT
    return ModelParams.from_arrays(arrays)


@dataclass
class AttentionParams:
    W1: Tensor
    W2: Tensor
    v: Tensor

    def __post_init__(self):
        k = self.v.shape[0]
        if self.W1.shape != (k, k) or self.W2.shape != (k, k):
            raise ValueError(f"attention shapes disagree: W1 {self.W1.shape}, W2 {self.W2.shape}, v {self.v.shape}")


@dataclass
class EncodedInstance:
    embeddings: Tensor          # (n, k)
    final: LstmCellState

    @property
    def n(self) -> int:
        return self.embeddings.shape[0]


def _coords_of(source) -> np.ndarray:
    if isinstance(source, TspInstance):
        if source.coords is None:
            raise ValueError("instance has no coordinates to encode; pass the unperturbed instance")
        return source.coords
    coords = np.asarray(source, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ValueError(f"coords must have shape (n, 2), got {coords.shape}")
    return coords


def encode(source, params: ModelParams) -> EncodedInstance:
    """Run the encoder LSTM over the city sequence; one embedding per city."""
    coords = _coords_of(source)
    k = params.hidden
    inputs = dense_forward(Tensor(coords), params["embed_W"], params["embed_b"])
    state = LstmCellState.zeros(k)
    rows: List[Tensor] = []
    for a in range(coords.shape[0]):
        state = lstm_step(inputs[a], state, params.encoder)
        rows.append(state.h)
    return EncodedInstance(embeddings=stack(rows), final=state)


def decoder_input(state: EpisodeState, encoded: EncodedInstance, params: ModelParams) -> Tensor:
    x = encoded.embeddings[state.current]
    if state.t == 0:
        x = x + params["dec_start"]
    return x


def decode_state(state: EpisodeState, encoded: EncodedInstance, params: ModelParams,
                 prev: Optional[LstmCellState] = None) -> LstmCellState:
    """One decoder step consuming the current city. At t = 0 `prev` defaults to the encoder state."""
    if prev is None:
        if state.t != 0:
            raise InvalidStateError("decoder state for t > 0 needs the previous decoder state")
        prev = encoded.final
    return lstm_step(decoder_input(state, encoded, params), prev, params.decoder)


def context_matrix(h_t, embeddings: Tensor, att: AttentionParams) -> Tensor:
    """Rows c_ta = tanh(W1 h_t + W2 e_a) for each embedding row."""
    projected_h = matmul(att.W1, as_tensor(h_t))
    return tanh(matmul(embeddings, att.W2.T) + projected_h)


def context_vector(h_t, e_a, att: AttentionParams) -> Tensor:
    return tanh(matmul(att.W1, as_tensor(h_t)) + matmul(att.W2, as_tensor(e_a)))


def score_actions(h_t, encoded: EncodedInstance, actions: Sequence[int],
                  att: AttentionParams) -> Tuple[Tensor, Tensor]:
    """Logits u_ta and contexts c_ta for the given actions, in the given order."""
    if not actions:
        raise InvalidStateError("no feasible actions to score")
    rows = encoded.embeddings[list(actions)]
    contexts = context_matrix(h_t, rows, att)
    return matmul(contexts, att.v), contexts


def attention_scores(h_t, encoded: EncodedInstance, feasible: Sequence[int],
                     att: AttentionParams) -> Dict[int, float]:
    actions = sorted(feasible)
    with no_grad():
        logits, _ = score_actions(h_t, encoded, actions, att)
    return {a: float(u) for a, u in zip(actions, logits.data)}


class PrefixFeaturizer:
    """Decoder states and contexts for visited prefixes, memoized per prefix.

    Encodings are keyed by instance id. With `track_grad=False` everything is
    computed under no_grad and may be reused until the sequence parameters
    change; call `invalidate()` after each update to them.
    """

    def __init__(self, params: ModelParams, coords_by_id: Mapping[int, np.ndarray], track_grad: bool = False):
        self.params = params
        self.coords_by_id = coords_by_id
        self.track_grad = track_grad
        self._encoded: Dict[int, EncodedInstance] = {}
        self._decoded: Dict[Tuple[int, Tuple[int, ...]], LstmCellState] = {}

    def invalidate(self) -> None:
        self._encoded.clear()
        self._decoded.clear()

    def _run(self, fn, *args):
        if self.track_grad:
            return fn(*args)
        with no_grad():
            return fn(*args)

    def encoded(self, instance_id: int) -> EncodedInstance:
        enc = self._encoded.get(instance_id)
        if enc is None:
            enc = self._run(encode, self.coords_by_id[instance_id], self.params)
            self._encoded[instance_id] = enc
        return enc

    def decoder_state(self, instance_id: int, visited: Tuple[int, ...]) -> LstmCellState:
        key = (instance_id, tuple(visited))
        cached = self._decoded.get(key)
        if cached is not None:
            return cached
        enc = self.encoded(instance_id)
        # walk forward from the longest memoized prefix
        depth = len(visited)
        while depth > 1 and (instance_id, tuple(visited[:depth - 1])) not in self._decoded:
            depth -= 1
        prev = self._decoded.get((instance_id, tuple(visited[:depth - 1]))) if depth > 1 else None
        for d in range(depth, len(visited) + 1):
            st = EpisodeState(visited=tuple(visited[:d]), n=enc.n)
            prev = self._run(decode_state, st, enc, self.params, prev)
            self._decoded[(instance_id, tuple(visited[:d]))] = prev
        return prev

    def contexts(self, instance_id: int, visited: Tuple[int, ...], actions: Sequence[int]) -> Tuple[Tensor, Tensor]:
        """(logits, contexts) for `actions` from the state with this visited prefix."""
        enc = self.encoded(instance_id)
        dec = self.decoder_state(instance_id, visited)
        return self._run(score_actions, dec.h, enc, list(actions), self.params.attention)
