"""Recurrent layers for the caption generator.

Provides the plain LSTM step, additive soft attention, the conditional
normalization ("modulation network") that rescales and shifts a normalized
vector using scale/shift MLPs driven by the syntax context, and the
syntax-modulated LSTM step whose gate pre-activations and cell pass through
that network.

All layer functions accept either a single vector ([D]) or a batch with a
leading axis ([B, D]); memories are [T, D] or [B, T, D].  Parameters are
read-only during a forward/backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .tensor import Tensor


class EmptyMemory(tt.TensorError):
    pass


GATE_ORDER = ("f", "i", "o", "g")
MN_EPS = 1e-5
INIT_RANGE = 0.08


@dataclass
class LstmParams:
    """Fused-gate LSTM weights, gate order (forget, input, output, candidate)."""

    w_x: Tensor  # [4H, D_in]
    w_h: Tensor  # [4H, H]
    b: Tensor  # [4H]

    @property
    def hidden(self) -> int:
        return self.w_h.shape[1]


@dataclass
class AttentionParams:
    """Additive scoring: e = v . tanh(W_q q + W_m m_t + b)."""

    w_q: Tensor  # [A, H_q]
    w_m: Tensor  # [A, H_m]
    v: Tensor  # [A]
    b: Tensor  # [A]


@dataclass
class Mlp:
    """Two layers, tanh hidden activation, affine output."""

    w1: Tensor  # [hidden, in]
    b1: Tensor  # [hidden]
    w2: Tensor  # [out, hidden]
    b2: Tensor  # [out]


@dataclass
class MlpPair:
    """Scale and shift generators for one modulation site."""

    gamma: Mlp
    beta: Mlp


@dataclass
class ModulationParams:
    """Three independent MLP pairs: recurrent path, input path, cell path."""

    h_pair: MlpPair  # out 4H
    x_pair: MlpPair  # out 4H
    c_pair: MlpPair  # out H


def uniform_init(rng: np.random.Generator, shape, name: str) -> Tensor:
    data = rng.uniform(-INIT_RANGE, INIT_RANGE, size=shape)
    return Tensor(data, requires_grad=True, name=name)


def zeros_init(shape, name: str) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


def init_lstm(rng: np.random.Generator, d_in: int, hidden: int, name: str) -> LstmParams:
    """Uniform weight init; zero bias except forget-gate bias of one."""
    b = np.zeros(4 * hidden)
    b[:hidden] = 1.0
    return LstmParams(
        w_x=uniform_init(rng, (4 * hidden, d_in), f"{name}.w_x"),
        w_h=uniform_init(rng, (4 * hidden, hidden), f"{name}.w_h"),
        b=Tensor(b, requires_grad=True, name=f"{name}.b"),
    )


def init_attention(rng: np.random.Generator, q_width: int, m_width: int, attn_width: int, name: str) -> AttentionParams:
    return AttentionParams(
        w_q=uniform_init(rng, (attn_width, q_width), f"{name}.w_q"),
        w_m=uniform_init(rng, (attn_width, m_width), f"{name}.w_m"),
        v=uniform_init(rng, (attn_width,), f"{name}.v"),
        b=zeros_init((attn_width,), f"{name}.b"),
    )


def init_mlp(rng: np.random.Generator, z_width: int, out_width: int, out_bias: float, name: str) -> Mlp:
    """Final layer starts at zero weights so the output is exactly out_bias."""
    return Mlp(
        w1=uniform_init(rng, (z_width, z_width), f"{name}.w1"),
        b1=zeros_init((z_width,), f"{name}.b1"),
        w2=zeros_init((out_width, z_width), f"{name}.w2"),
        b2=Tensor(np.full(out_width, out_bias), requires_grad=True, name=f"{name}.b2"),
    )


def init_mlp_pair(rng: np.random.Generator, z_width: int, out_width: int, name: str) -> MlpPair:
    # gamma starts at 1 and beta at 0: the first updates see a plain
    # layer-normalized LSTM, and the modulation is learned from there
    return MlpPair(
        gamma=init_mlp(rng, z_width, out_width, 1.0, f"{name}.gamma"),
        beta=init_mlp(rng, z_width, out_width, 0.0, f"{name}.beta"),
    )


def init_modulation(rng: np.random.Generator, z_width: int, hidden: int, name: str) -> ModulationParams:
    return ModulationParams(
        h_pair=init_mlp_pair(rng, z_width, 4 * hidden, f"{name}.h"),
        x_pair=init_mlp_pair(rng, z_width, 4 * hidden, f"{name}.x"),
        c_pair=init_mlp_pair(rng, z_width, hidden, f"{name}.c"),
    )


def mlp_apply(mlp: Mlp, z: Tensor) -> Tensor:
    hidden = tt.tanh(tt.linear(z, mlp.w1) + mlp.b1)
    return tt.linear(hidden, mlp.w2) + mlp.b2


def _split_gates(pre: Tensor, hidden: int):
    f = tt.slice_axis(pre, pre.ndim - 1, 0, hidden)
    i = tt.slice_axis(pre, pre.ndim - 1, hidden, 2 * hidden)
    o = tt.slice_axis(pre, pre.ndim - 1, 2 * hidden, 3 * hidden)
    g = tt.slice_axis(pre, pre.ndim - 1, 3 * hidden, 4 * hidden)
    return f, i, o, g


def lstm_step(params: LstmParams, x: Tensor, h_prev: Tensor, c_prev: Tensor):
    """One LSTM update; returns (h, c)."""
    hidden = params.hidden
    pre = tt.linear(x, params.w_x) + tt.linear(h_prev, params.w_h) + params.b
    f, i, o, g = _split_gates(pre, hidden)
    c = tt.sigmoid(f) * c_prev + tt.sigmoid(i) * tt.tanh(g)
    h = tt.sigmoid(o) * tt.tanh(c)
    return h, c


def project_memory(params: AttentionParams, memory: Tensor) -> Tensor:
    """Precompute W_m applied to the memory; reusable across query steps."""
    return tt.linear(memory, params.w_m)


def attention(
    params: AttentionParams,
    query: Tensor,
    memory: Tensor,
    mask: np.ndarray | None = None,
    memory_proj: Tensor | None = None,
):
    """Soft attention over memory rows; returns (context, weights).

    ``memory`` is [T, H_m] or [B, T, H_m] with a matching query.  ``mask``
    is an optional {0, 1} array over the T axis; zero entries get exactly
    zero weight (their scores are pushed to -1e9 before the softmax, which
    underflows to zero in the exponent).  Pass ``memory_proj`` from
    ``project_memory`` when attending over the same memory repeatedly.
    """
    if memory.shape[-2] == 0:
        raise EmptyMemory("attention over an empty memory")
    batched = memory.ndim == 3
    qp = tt.linear(query, params.w_q)  # [A] or [B, A]
    if batched:
        qp = qp.reshape((qp.shape[0], 1, qp.shape[1]))
    mp = memory_proj if memory_proj is not None else project_memory(params, memory)
    scores = tt.tanh(qp + mp + params.b) @ params.v  # [T] or [B, T]
    if mask is not None:
        scores = scores + tt.constant((np.asarray(mask, dtype=np.float64) - 1.0) * 1e9)
    weights = tt.softmax(scores)
    if batched:
        b, t = weights.shape
        ctx = weights.reshape((b, 1, t)) @ memory
        context = ctx.reshape((b, memory.shape[-1]))
    else:
        t = weights.shape[0]
        context = (weights.reshape((1, t)) @ memory).reshape((memory.shape[-1],))
    return context, weights


def modulation_network(x: Tensor, z_s: Tensor, pair: MlpPair, eps: float = MN_EPS, per_gate: int | None = None) -> Tensor:
    """Normalize x over its last axis, then scale by gamma(z_s), shift by beta(z_s).

    The standard deviation is the population estimator with ``eps`` added
    under the square root, which removes the constant-vector singularity.
    ``per_gate`` optionally normalizes in that many equal chunks instead of
    across the whole vector (ablation switch).
    """
    gamma = mlp_apply(pair.gamma, z_s)
    beta = mlp_apply(pair.beta, z_s)
    if per_gate:
        k = x.shape[-1] // per_gate
        chunked = x.reshape(x.shape[:-1] + (per_gate, k))
        normed = _normalize_last(chunked, eps).reshape(x.shape)
    else:
        normed = _normalize_last(x, eps)
    return gamma * normed + beta


def _normalize_last(x: Tensor, eps: float) -> Tensor:
    return tt.normalize_last(x, eps)


@dataclass
class DecoderParams:
    """Decoder LSTM weights plus the optional modulation stack."""

    lstm: LstmParams
    modulation: ModulationParams | None = None


def smcg_step(
    dec: DecoderParams,
    x_t: Tensor,
    z_s: Tensor,
    h_prev: Tensor,
    c_prev: Tensor,
    per_gate: bool = False,
):
    """Syntax-modulated LSTM update; returns (h, c).

    The recurrent and input pre-activations are normalized and modulated
    separately (one scale/shift pair each, driven by the syntax context
    z_s), summed with the bias, and split into gates; the fresh cell is
    modulated by the third pair before entering the output tanh.  The
    un-modulated cell is what recurs.
    """
    mod = dec.modulation
    if mod is None:
        raise ValueError("smcg_step needs modulation parameters")
    params = dec.lstm
    hidden = params.hidden
    chunks = 4 if per_gate else None
    pre_h = modulation_network(tt.linear(h_prev, params.w_h), z_s, mod.h_pair, per_gate=chunks)
    pre_x = modulation_network(tt.linear(x_t, params.w_x), z_s, mod.x_pair, per_gate=chunks)
    pre = pre_h + pre_x + params.b
    f, i, o, g = _split_gates(pre, hidden)
    c = tt.sigmoid(f) * c_prev + tt.sigmoid(i) * tt.tanh(g)
    modulated_c = modulation_network(c, z_s, mod.c_pair)
    h = tt.sigmoid(o) * tt.tanh(modulated_c)
    return h, c


def word_distribution(w_g: Tensor, b_g: Tensor, h: Tensor) -> Tensor:
    """Output distribution over the vocabulary: softmax(W_g h + b_g)."""
    return tt.softmax(tt.linear(h, w_g) + b_g)


def word_logits(w_g: Tensor, b_g: Tensor, h: Tensor) -> Tensor:
    return tt.linear(h, w_g) + b_g


def mlp_tensors(mlp: Mlp) -> list[Tensor]:
    return [mlp.w1, mlp.b1, mlp.w2, mlp.b2]


def pair_tensors(pair: MlpPair) -> list[Tensor]:
    return mlp_tensors(pair.gamma) + mlp_tensors(pair.beta)


def modulation_tensors(mod: ModulationParams) -> list[Tensor]:
    return pair_tensors(mod.h_pair) + pair_tensors(mod.x_pair) + pair_tensors(mod.c_pair)


def lstm_tensors(params: LstmParams) -> list[Tensor]:
    return [params.w_x, params.w_h, params.b]


def attention_tensors(params: AttentionParams) -> list[Tensor]:
    return [params.w_q, params.w_m, params.v, params.b]
