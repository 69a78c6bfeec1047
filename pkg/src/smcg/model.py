"""Full architecture: encoders, modulated decoder, reconstructors, generation.

A video encoder LSTM and a syntax-token encoder LSTM feed a word decoder
that attends over both; in the "smcg" variant the decoder's gates and cell
are modulated by the attended syntax context, in "concat" the syntax
context is concatenated into the decoder input instead, and in "caption"
the syntax side is absent entirely.  Two optional reconstructors attend
over the decoder states to reproduce the frame features and the syntax
token sequence.

Layer functions run on batches internally (leading batch axis); the
single-instance entry points wrap them.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, asdict

import numpy as np

from . import nn
from . import tensor as tt
from .data import BOS_ID, EOS_ID, PAD_ID, RESERVED_TOKENS, Vocabulary, write_atomic
from .tensor import Tensor


class ModelError(Exception):
    pass


class EmptyVideo(ModelError):
    pass


class EmptySequence(ModelError):
    pass


class EmptyDecoderStates(ModelError):
    pass


class TargetTooLong(ModelError):
    pass


class CheckpointError(ModelError):
    pass


VARIANTS = ("smcg", "concat", "caption")
CHECKPOINT_MAGIC = b"SMCG"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    word_vocab: int
    syntax_vocab: int
    feature_width: int
    hidden: int = 64
    word_emb: int = 32
    syntax_emb: int = 32
    attn: int = 32
    variant: str = "smcg"
    rec_video: bool = True
    rec_syntax: bool = True
    mn_per_gate: bool = False
    decoder_init: str = "zeros"  # zeros | encoder-mean
    max_len: int = 30

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ModelError(f"unknown variant {self.variant!r}")
        if self.decoder_init not in ("zeros", "encoder-mean"):
            raise ModelError(f"unknown decoder_init {self.decoder_init!r}")


@dataclass
class EncoderOutputs:
    """Encoder state sequences plus their validity masks."""

    h_v: Tensor  # [B, m, H]
    v_mask: np.ndarray  # [B, m]
    h_s: Tensor | None = None  # [B, n, H]
    s_mask: np.ndarray | None = None


class SmcgModel:
    """Parameter container for the whole architecture."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        c = config
        self.word_emb = nn.uniform_init(rng, (c.word_vocab, c.word_emb), "word_emb")
        self.encoder_v = nn.init_lstm(rng, c.feature_width, c.hidden, "encoder_v")
        self.attn_v = nn.init_attention(rng, c.hidden, c.hidden, c.attn, "attn_v")

        self.syntax_emb = None
        self.encoder_s = None
        self.attn_s = None
        if c.variant != "caption":
            self.syntax_emb = nn.uniform_init(rng, (c.syntax_vocab, c.syntax_emb), "syntax_emb")
            self.encoder_s = nn.init_lstm(rng, c.syntax_emb, c.hidden, "encoder_s")
            self.attn_s = nn.init_attention(rng, c.hidden, c.hidden, c.attn, "attn_s")

        dec_in = c.word_emb + c.hidden
        if c.variant == "concat":
            dec_in += c.hidden
        modulation = None
        if c.variant == "smcg":
            modulation = nn.init_modulation(rng, c.hidden, c.hidden, "modulation")
        self.decoder = nn.DecoderParams(
            lstm=nn.init_lstm(rng, dec_in, c.hidden, "decoder"),
            modulation=modulation,
        )
        self.w_g = nn.uniform_init(rng, (c.word_vocab, c.hidden), "w_g")
        self.b_g = nn.zeros_init((c.word_vocab,), "b_g")

        self.attn_vrec = None
        self.rec_v = None
        if c.rec_video:
            self.attn_vrec = nn.init_attention(rng, c.feature_width, c.hidden, c.attn, "attn_vrec")
            self.rec_v = nn.init_lstm(rng, c.hidden, c.feature_width, "rec_v")

        self.attn_srec = None
        self.rec_s = None
        self.w_s = None
        self.b_s = None
        if c.rec_syntax:
            self.attn_srec = nn.init_attention(rng, c.hidden, c.hidden, c.attn, "attn_srec")
            self.rec_s = nn.init_lstm(rng, c.hidden, c.hidden, "rec_s")
            self.w_s = nn.uniform_init(rng, (c.syntax_vocab, c.hidden), "w_s")
            self.b_s = nn.zeros_init((c.syntax_vocab,), "b_s")

    def parameters(self) -> dict[str, Tensor]:
        """Name -> tensor, in stable construction order."""
        out: dict[str, Tensor] = {}

        def take(tensors):
            for t in tensors:
                out[t.name] = t

        take([self.word_emb])
        take(nn.lstm_tensors(self.encoder_v))
        take(nn.attention_tensors(self.attn_v))
        if self.syntax_emb is not None:
            take([self.syntax_emb])
            take(nn.lstm_tensors(self.encoder_s))
            take(nn.attention_tensors(self.attn_s))
        take(nn.lstm_tensors(self.decoder.lstm))
        if self.decoder.modulation is not None:
            take(nn.modulation_tensors(self.decoder.modulation))
        take([self.w_g, self.b_g])
        if self.rec_v is not None:
            take(nn.attention_tensors(self.attn_vrec))
            take(nn.lstm_tensors(self.rec_v))
        if self.rec_s is not None:
            take(nn.attention_tensors(self.attn_srec))
            take(nn.lstm_tensors(self.rec_s))
            take([self.w_s, self.b_s])
        return out

    def zero_grads(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()


def build_model(config: ModelConfig, seed: int) -> SmcgModel:
    return SmcgModel(config, np.random.default_rng(seed))


# --- encoders ---------------------------------------------------------------


def _as_batched(x, want_ndim: int):
    """Promote a single instance by one leading axis; report if promoted."""
    t = x if isinstance(x, Tensor) else tt.constant(np.asarray(x, dtype=np.float64))
    if t.ndim == want_ndim - 1:
        return tt.reshape(t, (1,) + t.shape), True
    if t.ndim != want_ndim:
        raise tt.ShapeMismatch(f"expected {want_ndim - 1}- or {want_ndim}-d input, got {t.shape}")
    return t, False


def _run_lstm(params: nn.LstmParams, step_inputs, batch: int, hidden: int) -> Tensor:
    """Run an LSTM over per-step inputs from zero state; stack h into [B, T, H]."""
    h = tt.constant(np.zeros((batch, hidden)))
    c = tt.constant(np.zeros((batch, hidden)))
    states = []
    for x in step_inputs:
        h, c = nn.lstm_step(params, x, h, c)
        states.append(tt.reshape(h, (batch, 1, hidden)))
    return tt.concat(states, axis=1)


def _frame_steps(feats: Tensor):
    """Per-frame [B, D] inputs; plain array views unless gradients are needed."""
    b, steps, width = feats.shape
    if feats.requires_grad:
        for t in range(steps):
            yield tt.reshape(tt.slice_axis(feats, 1, t, t + 1), (b, width))
    else:
        for t in range(steps):
            yield tt.constant(feats.data[:, t, :])


def encode_video(model: SmcgModel, features, mask: np.ndarray | None = None) -> Tensor:
    """All video-encoder hidden states, [m, H] or [B, m, H]."""
    feats, single = _as_batched(features, 3)
    if feats.shape[1] < 1:
        raise EmptyVideo("no frames to encode")
    states = _run_lstm(model.encoder_v, _frame_steps(feats), feats.shape[0], model.config.hidden)
    return tt.reshape(states, states.shape[1:]) if single else states


def encode_syntax(model: SmcgModel, token_ids) -> Tensor:
    """All syntax-encoder hidden states for a token id sequence or batch."""
    if model.encoder_s is None:
        raise ModelError("this variant has no syntax encoder")
    ids = np.asarray(token_ids, dtype=np.int64)
    single = ids.ndim == 1
    if single:
        ids = ids[None, :]
    if ids.shape[1] < 1:
        raise EmptySequence("no syntax tokens to encode")
    steps = (tt.embedding_lookup(model.syntax_emb, ids[:, t]) for t in range(ids.shape[1]))
    states = _run_lstm(model.encoder_s, steps, ids.shape[0], model.config.hidden)
    return tt.reshape(states, states.shape[1:]) if single else states


def encode_inputs(model: SmcgModel, features, syntax_ids=None, v_mask=None, s_mask=None) -> EncoderOutputs:
    """Encode one batch (or one instance promoted to a batch of one)."""
    feats, _ = _as_batched(features, 3)
    h_v = encode_video(model, feats)
    b, m = feats.shape[0], feats.shape[1]
    if v_mask is None:
        v_mask = np.ones((b, m))
    h_s = None
    if model.config.variant != "caption":
        if syntax_ids is None:
            raise EmptySequence("this variant needs a syntax token sequence")
        ids = np.asarray(syntax_ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None, :]
        h_s = encode_syntax(model, ids)
        if s_mask is None:
            s_mask = np.ones(ids.shape)
    return EncoderOutputs(h_v=h_v, v_mask=np.asarray(v_mask, dtype=np.float64), h_s=h_s,
                          s_mask=None if h_s is None else np.asarray(s_mask, dtype=np.float64))


# --- decoding ---------------------------------------------------------------


def _initial_state(model: SmcgModel, enc: EncoderOutputs):
    b = enc.h_v.shape[0]
    hidden = model.config.hidden
    if model.config.decoder_init == "encoder-mean":
        mask = tt.constant(enc.v_mask[..., None])
        total = tt.reduce_sum(enc.h_v * mask, axis=1)
        denom = tt.constant(enc.v_mask.sum(axis=1, keepdims=True))
        h = total / denom
    else:
        h = tt.constant(np.zeros((b, hidden)))
    c = tt.constant(np.zeros((b, hidden)))
    return h, c


def _memory_projections(model: SmcgModel, enc: EncoderOutputs):
    v_proj = nn.project_memory(model.attn_v, enc.h_v)
    s_proj = None
    if enc.h_s is not None:
        s_proj = nn.project_memory(model.attn_s, enc.h_s)
    return v_proj, s_proj


def _decoder_step(model: SmcgModel, enc: EncoderOutputs, prev_ids: np.ndarray, h, c, projections=None):
    """One decode step for a batch; returns (logits, h, c)."""
    v_proj, s_proj = projections if projections is not None else _memory_projections(model, enc)
    z_v, _ = nn.attention(model.attn_v, h, enc.h_v, enc.v_mask, memory_proj=v_proj)
    z_s = None
    if enc.h_s is not None:
        z_s, _ = nn.attention(model.attn_s, h, enc.h_s, enc.s_mask, memory_proj=s_proj)
    w_prev = tt.embedding_lookup(model.word_emb, prev_ids)
    if model.config.variant == "concat":
        x = tt.concat([w_prev, z_v, z_s], axis=-1)
        h, c = nn.lstm_step(model.decoder.lstm, x, h, c)
    elif model.config.variant == "smcg":
        x = tt.concat([w_prev, z_v], axis=-1)
        h, c = nn.smcg_step(model.decoder, x, z_s, h, c, per_gate=model.config.mn_per_gate)
    else:
        x = tt.concat([w_prev, z_v], axis=-1)
        h, c = nn.lstm_step(model.decoder.lstm, x, h, c)
    logits = nn.word_logits(model.w_g, model.b_g, h)
    return logits, h, c


def decode_teacher_forced_batch(model: SmcgModel, enc: EncoderOutputs, tokens: np.ndarray):
    """Teacher-forced decode of [B, L] id rows (BOS first, EOS inside).

    Returns (per-step logits list, decoder state sequence [B, T, H]) with
    T = L - 1 steps: step t consumes token t and predicts token t + 1.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    steps = tokens.shape[1] - 1
    if steps < 1:
        raise EmptySequence("need at least one prediction step")
    if steps > model.config.max_len:
        raise TargetTooLong(f"{steps} steps exceed the limit of {model.config.max_len}")
    b = tokens.shape[0]
    hidden = model.config.hidden
    h, c = _initial_state(model, enc)
    projections = _memory_projections(model, enc)
    logits_steps = []
    states = []
    for t in range(steps):
        logits, h, c = _decoder_step(model, enc, tokens[:, t], h, c, projections)
        logits_steps.append(logits)
        states.append(tt.reshape(h, (b, 1, hidden)))
    return logits_steps, tt.concat(states, axis=1)


def decode_teacher_forced(model: SmcgModel, enc: EncoderOutputs, target_words):
    """Single-instance wrapper; returns (logits [T, V], states [T, H])."""
    tokens = np.asarray(target_words, dtype=np.int64)[None, :]
    logits_steps, states = decode_teacher_forced_batch(model, enc, tokens)
    stacked = tt.concat([tt.reshape(l, (1, l.shape[-1])) for l in logits_steps], axis=0)
    return stacked, tt.reshape(states, states.shape[1:])


# --- reconstructors ----------------------------------------------------------


def reconstruct_video_batch(model: SmcgModel, decoder_states: Tensor, g_mask: np.ndarray, m: int) -> Tensor:
    """Rebuild [B, m, D_v] features by attending over the decoder states."""
    if model.rec_v is None:
        raise ModelError("video reconstructor is disabled in this model")
    if decoder_states.shape[-2] == 0:
        raise EmptyDecoderStates("no decoder states to attend over")
    b = decoder_states.shape[0]
    width = model.config.feature_width
    h = tt.constant(np.zeros((b, width)))
    c = tt.constant(np.zeros((b, width)))
    proj = nn.project_memory(model.attn_vrec, decoder_states)
    rows = []
    for _ in range(m):
        z, _ = nn.attention(model.attn_vrec, h, decoder_states, g_mask, memory_proj=proj)
        h, c = nn.lstm_step(model.rec_v, z, h, c)
        rows.append(tt.reshape(h, (b, 1, width)))
    return tt.concat(rows, axis=1)


def reconstruct_video(model: SmcgModel, decoder_states: Tensor, m: int) -> Tensor:
    states, single = _as_batched(decoder_states, 3)
    out = reconstruct_video_batch(model, states, np.ones(states.shape[:2]), m)
    return tt.reshape(out, out.shape[1:]) if single else out


def reconstruct_syntax_batch(model: SmcgModel, decoder_states: Tensor, g_mask: np.ndarray, n: int):
    """Per-step syntax-vocabulary logits, a list of n [B, V_s] tensors."""
    if model.rec_s is None:
        raise ModelError("syntax reconstructor is disabled in this model")
    if decoder_states.shape[-2] == 0:
        raise EmptyDecoderStates("no decoder states to attend over")
    b = decoder_states.shape[0]
    hidden = model.config.hidden
    h = tt.constant(np.zeros((b, hidden)))
    c = tt.constant(np.zeros((b, hidden)))
    proj = nn.project_memory(model.attn_srec, decoder_states)
    logits_steps = []
    for _ in range(n):
        z, _ = nn.attention(model.attn_srec, h, decoder_states, g_mask, memory_proj=proj)
        h, c = nn.lstm_step(model.rec_s, z, h, c)
        logits_steps.append(nn.word_logits(model.w_s, model.b_s, h))
    return logits_steps


def reconstruct_syntax(model: SmcgModel, decoder_states: Tensor, n: int) -> Tensor:
    states, single = _as_batched(decoder_states, 3)
    steps = reconstruct_syntax_batch(model, states, np.ones(states.shape[:2]), n)
    stacked = tt.concat([tt.reshape(l, (l.shape[0], 1, l.shape[-1])) for l in steps], axis=1)
    return tt.reshape(stacked, stacked.shape[1:]) if single else stacked


# --- generation ---------------------------------------------------------------


def _blocked(logits: np.ndarray) -> np.ndarray:
    out = logits.copy()
    out[..., PAD_ID] = -np.inf
    out[..., BOS_ID] = -np.inf
    return out


def generate_batch(model: SmcgModel, features, syntax_ids=None, v_mask=None, s_mask=None,
                   max_len: int | None = None) -> list[list[int]]:
    """Greedy free-running decode for a batch; returns word ids per row.

    Feeds back the argmax word, never emits pad or begin tokens, stops each
    row at its end token or at the length limit.
    """
    limit = model.config.max_len if max_len is None else max_len
    enc = encode_inputs(model, features, syntax_ids, v_mask, s_mask)
    b = enc.h_v.shape[0]
    h, c = _initial_state(model, enc)
    prev = np.full(b, BOS_ID, dtype=np.int64)
    done = np.zeros(b, dtype=bool)
    projections = _memory_projections(model, enc)
    rows: list[list[int]] = [[] for _ in range(b)]
    for _ in range(limit):
        logits, h, c = _decoder_step(model, enc, prev, h, c, projections)
        nxt = np.argmax(_blocked(logits.data), axis=-1)
        for i in range(b):
            if done[i]:
                continue
            if nxt[i] == EOS_ID:
                done[i] = True
            else:
                rows[i].append(int(nxt[i]))
        if done.all():
            break
        prev = np.where(done, EOS_ID, nxt)
    return rows


def generate(model: SmcgModel, features, syntax_ids=None, mode: str = "greedy") -> list[int]:
    """Free-running decode of one instance; mode "greedy" or "beam:k"."""
    if mode == "greedy":
        return generate_batch(model, np.asarray(features)[None, :], None if syntax_ids is None else np.asarray(syntax_ids)[None, :])[0]
    if not mode.startswith("beam:"):
        raise ModelError(f"unknown generation mode {mode!r}")
    k = int(mode.split(":", 1)[1])
    if k < 1:
        raise ModelError("beam width must be positive")
    return _beam_search(model, features, syntax_ids, k)


def _beam_search(model: SmcgModel, features, syntax_ids, k: int) -> list[int]:
    enc = encode_inputs(model, np.asarray(features)[None, :],
                        None if syntax_ids is None else np.asarray(syntax_ids)[None, :])
    h0, c0 = _initial_state(model, enc)
    projections = _memory_projections(model, enc)
    # hypothesis: (emitted ids, sum logprob, h, c, done)
    beams = [([], 0.0, h0, c0, False)]
    for _ in range(model.config.max_len):
        candidates = []
        for tokens, logp, h, c, hyp_done in beams:
            if hyp_done:
                candidates.append((tokens, logp, h, c, True))
                continue
            prev = np.array([tokens[-1] if tokens else BOS_ID], dtype=np.int64)
            logits, h2, c2 = _decoder_step(model, enc, prev, h, c, projections)
            blocked = _blocked(logits.data)[0]
            shifted = blocked - blocked.max()
            logprobs = shifted - np.log(np.exp(shifted).sum())
            order = np.argsort(-logprobs, kind="stable")[:k]
            for idx in order:
                idx = int(idx)
                if idx == EOS_ID:
                    candidates.append((tokens, logp + logprobs[idx], h2, c2, True))
                else:
                    candidates.append((tokens + [idx], logp + logprobs[idx], h2, c2, False))
        candidates.sort(key=lambda item: -item[1])
        beams = candidates[:k]
        if all(item[4] for item in beams):
            break
    # rank finished hypotheses by length-normalized log probability
    def norm(item):
        tokens, logp = item[0], item[1]
        return logp / max(1, len(tokens) + 1)  # +1 counts the end token

    best = max(beams, key=norm)
    return best[0]


# --- checkpoints ---------------------------------------------------------------


def save_checkpoint(model: SmcgModel, path: str, word_vocab: Vocabulary, syntax_vocab: Vocabulary) -> None:
    """Binary container of float32 parameters plus a JSON sidecar manifest."""
    params = model.parameters()
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<II", CHECKPOINT_VERSION, len(params))
    for name, tensor in params.items():
        encoded = name.encode("utf-8")
        blob += struct.pack("<I", len(encoded))
        blob += encoded
        shape = tensor.data.shape
        blob += struct.pack("<I", len(shape))
        for extent in shape:
            blob += struct.pack("<I", extent)
        blob += tensor.data.astype("<f4").tobytes()
    write_atomic(path, bytes(blob))
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "word_vocab": word_vocab.tokens,
        "syntax_vocab": syntax_vocab.tokens,
    }
    write_atomic(manifest_path(path), json.dumps(manifest, indent=2, sort_keys=True))


def manifest_path(checkpoint_path: str) -> str:
    return checkpoint_path + ".manifest.json"


def load_checkpoint(path: str) -> tuple[SmcgModel, Vocabulary, Vocabulary]:
    """Rebuild the model (and both vocabularies) from a saved checkpoint."""
    with open(manifest_path(path), "r", encoding="utf-8") as handle:
        manifest = json.load(handle)
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported manifest version in {manifest_path(path)}")
    config = ModelConfig(**manifest["config"])
    reserved = len(RESERVED_TOKENS)
    word_vocab = Vocabulary(manifest["word_vocab"][reserved:])
    syntax_vocab = Vocabulary(manifest["syntax_vocab"][reserved:])
    model = build_model(config, seed=0)

    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    version, count = struct.unpack("<II", blob[4:12])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    offset = 12
    loaded: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        shape = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        values = np.frombuffer(blob, dtype="<f4", count=n, offset=offset)
        offset += 4 * n
        loaded[name] = values.reshape(shape).astype(np.float64)
    params = model.parameters()
    if set(params) != set(loaded):
        missing = set(params) ^ set(loaded)
        raise CheckpointError(f"{path}: parameter set mismatch: {sorted(missing)[:5]}")
    for name, tensor in params.items():
        if loaded[name].shape != tensor.data.shape:
            raise CheckpointError(f"{path}: shape mismatch for {name}")
        tensor.data = loaded[name]
    return model, word_vocab, syntax_vocab
