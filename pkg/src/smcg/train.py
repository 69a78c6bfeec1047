"""Training: the weighted three-term objective, Adam, and the run loop.

The objective sums a caption cross-entropy term, a frame-feature
reconstruction term (mean per-frame Euclidean distance), and a syntax-token
reconstruction cross-entropy, weighted alpha/lambda/eta.  During training
the ground-truth caption's own parse serves as the exemplar, since no
syntax-matched caption pairs exist.  Sequences are padded and masked
within each batch; losses are per-sequence sums averaged over the batch.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import metrics as mx
from . import tensor as tt
from .data import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    CaptionInstance,
    EmbeddingTable,
    SynthWorld,
    Vocabulary,
    syntax_tokens_of,
    write_atomic,
)
from .model import (
    ModelConfig,
    SmcgModel,
    build_model,
    decode_teacher_forced_batch,
    encode_inputs,
    generate_batch,
    reconstruct_syntax_batch,
    reconstruct_video_batch,
    save_checkpoint,
)
from .syntax import parse_bracketed, strip_leaves, tree_edit_distance
from .tensor import NonFiniteGradient, Tape, Tensor


class TrainError(Exception):
    pass


class LengthMismatch(TrainError):
    pass


RECONSTRUCTION_MODES = ("none", "video", "syntax", "both")
ABLATIONS = ("none", "video", "syntax", "all", "concat-baseline", "caption-baseline")


@dataclass
class TrainConfig:
    """Loss weights, optimizer settings, model widths, and run shape."""

    alpha: float = 1.0
    lam: float = 1.0
    eta: float = 4.0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 8
    seed: int = 0
    hidden: int = 64
    word_emb: int = 32
    syntax_emb: int = 32
    attn: int = 32
    max_caption_len: int = 30
    max_syntax_len: int = 80
    reconstruction: str = "both"
    variant: str = "smcg"
    grad_clip: float = 5.0
    mn_per_gate: bool = False
    decoder_init: str = "zeros"
    min_word_freq: int = 1
    eval_every: int = 1
    eval_videos: int = 50

    def __post_init__(self):
        for name in ("alpha", "lam", "eta"):
            if getattr(self, name) < 0:
                raise TrainError(f"{name} must be nonnegative")
        if self.reconstruction not in RECONSTRUCTION_MODES:
            raise TrainError(f"reconstruction must be one of {RECONSTRUCTION_MODES}")

    @property
    def rec_video(self) -> bool:
        return self.reconstruction in ("video", "both")

    @property
    def rec_syntax(self) -> bool:
        return self.reconstruction in ("syntax", "both")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise TrainError(f"unknown config fields: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def from_file(cls, path: str) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as handle:
            return cls.from_dict(json.load(handle))

    def apply_ablation(self, ablation: str) -> "TrainConfig":
        """Map an ablation name onto variant and reconstruction toggles."""
        if ablation not in ABLATIONS:
            raise TrainError(f"unknown ablation {ablation!r}")
        mapping = {
            "none": ("smcg", "none"),
            "video": ("smcg", "video"),
            "syntax": ("smcg", "syntax"),
            "all": ("smcg", "both"),
            "concat-baseline": ("concat", "none"),
            "caption-baseline": ("caption", "none"),
        }
        variant, reconstruction = mapping[ablation]
        raw = asdict(self)
        raw["variant"] = variant
        raw["reconstruction"] = reconstruction
        return TrainConfig.from_dict(raw)

    def model_config(self, word_vocab_size: int, syntax_vocab_size: int, feature_width: int) -> ModelConfig:
        return ModelConfig(
            word_vocab=word_vocab_size,
            syntax_vocab=syntax_vocab_size,
            feature_width=feature_width,
            hidden=self.hidden,
            word_emb=self.word_emb,
            syntax_emb=self.syntax_emb,
            attn=self.attn,
            variant=self.variant,
            rec_video=self.rec_video,
            rec_syntax=self.rec_syntax,
            mn_per_gate=self.mn_per_gate,
            decoder_init=self.decoder_init,
            max_len=self.max_caption_len,
        )


# --- losses -----------------------------------------------------------------


def caption_loss(logits, targets, mask: np.ndarray | None = None) -> Tensor:
    """Cross-entropy summed over timesteps, averaged over the batch.

    ``logits`` is [T, V] (one sequence) or [B, T, V]; ``targets`` holds the
    next-word ids with matching leading shape.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise LengthMismatch(f"logits {logits.shape} vs targets {targets.shape}")
    ce = tt.cross_entropy(logits, targets)
    if mask is not None:
        ce = ce * tt.constant(np.asarray(mask, dtype=np.float64))
    if ce.ndim == 1:
        return tt.reduce_sum(ce)
    batch = ce.shape[0]
    return tt.reduce_sum(ce) * (1.0 / batch)


def caption_loss_from_steps(logits_steps, tokens: np.ndarray, target_mask: np.ndarray) -> Tensor:
    """Same loss over per-step [B, V] logits (the batched decode output)."""
    batch = tokens.shape[0]
    total = None
    for t, logits in enumerate(logits_steps):
        ce = tt.cross_entropy(logits, tokens[:, t + 1]) * tt.constant(target_mask[:, t])
        summed = tt.reduce_sum(ce)
        total = summed if total is None else total + summed
    return total * (1.0 / batch)


def video_rec_loss(original, reconstruction, frame_mask: np.ndarray | None = None) -> Tensor:
    """Mean per-frame Euclidean distance; padded frames excluded via mask."""
    orig = original if isinstance(original, Tensor) else tt.constant(np.asarray(original, dtype=np.float64))
    if orig.shape != reconstruction.shape:
        raise tt.ShapeMismatch(f"{orig.shape} vs {reconstruction.shape}")
    norms = tt.sqrt(tt.squared_l2(orig, reconstruction))  # [m] or [B, m]
    if frame_mask is not None:
        mask = np.asarray(frame_mask, dtype=np.float64)
        norms = norms * tt.constant(mask)
        counts = mask.sum(axis=-1)
    else:
        counts = np.full(norms.shape[:-1], norms.shape[-1], dtype=np.float64)
    if norms.ndim == 1:
        return tt.reduce_sum(norms) * (1.0 / float(counts))
    per_video = tt.reduce_sum(norms, axis=-1) * tt.constant(1.0 / counts)
    return tt.reduce_sum(per_video) * (1.0 / norms.shape[0])


def syntax_rec_loss(logits_steps, syntax_tokens: np.ndarray, syntax_mask: np.ndarray) -> Tensor:
    """Token cross-entropy summed per sequence, averaged over the batch."""
    batch = syntax_tokens.shape[0]
    total = None
    for t, logits in enumerate(logits_steps):
        ce = tt.cross_entropy(logits, syntax_tokens[:, t]) * tt.constant(syntax_mask[:, t])
        summed = tt.reduce_sum(ce)
        total = summed if total is None else total + summed
    return total * (1.0 / batch)


# --- batches ----------------------------------------------------------------


@dataclass
class EncodedItem:
    """One training example: features plus encoded caption and its parse."""

    features: np.ndarray
    caption_ids: np.ndarray  # BOS ... EOS
    syntax_ids: np.ndarray  # linearized leaf-free parse of the same caption
    caption_text: str


@dataclass
class Batch:
    features: np.ndarray  # [B, m, D_v]
    frame_mask: np.ndarray  # [B, m]
    tokens: np.ndarray  # [B, L]
    target_mask: np.ndarray  # [B, L-1]
    syntax: np.ndarray  # [B, n]
    syntax_mask: np.ndarray  # [B, n]


def encode_training_items(instances, word_vocab: Vocabulary, syntax_vocab: Vocabulary, config: TrainConfig):
    """One item per (video, caption); the caption's parse is the exemplar."""
    items = []
    for inst in instances:
        for cap in inst.captions:
            words = cap.text.split()[: config.max_caption_len - 1]
            caption_ids = np.array(
                [BOS_ID] + word_vocab.encode_sequence(words) + [EOS_ID], dtype=np.int64
            )
            syn_tokens = syntax_tokens_of(cap)[: config.max_syntax_len]
            syntax_ids = np.array(syntax_vocab.encode_sequence(syn_tokens), dtype=np.int64)
            items.append(
                EncodedItem(
                    features=inst.features,
                    caption_ids=caption_ids,
                    syntax_ids=syntax_ids,
                    caption_text=cap.text,
                )
            )
    return items


def collate(items) -> Batch:
    batch = len(items)
    m_max = max(item.features.shape[0] for item in items)
    width = items[0].features.shape[1]
    feats = np.zeros((batch, m_max, width))
    frame_mask = np.zeros((batch, m_max))
    l_max = max(len(item.caption_ids) for item in items)
    tokens = np.full((batch, l_max), PAD_ID, dtype=np.int64)
    n_max = max(len(item.syntax_ids) for item in items)
    syntax = np.full((batch, n_max), PAD_ID, dtype=np.int64)
    syntax_mask = np.zeros((batch, n_max))
    for i, item in enumerate(items):
        m = item.features.shape[0]
        feats[i, :m] = item.features
        frame_mask[i, :m] = 1.0
        tokens[i, : len(item.caption_ids)] = item.caption_ids
        syntax[i, : len(item.syntax_ids)] = item.syntax_ids
        syntax_mask[i, : len(item.syntax_ids)] = 1.0
    target_mask = (tokens[:, 1:] != PAD_ID).astype(np.float64)
    return Batch(feats, frame_mask, tokens, target_mask, syntax, syntax_mask)


def total_loss(model: SmcgModel, batch: Batch, config: TrainConfig):
    """Weighted sum of the enabled loss terms plus a component breakdown.

    Disabled reconstructors are not run at all, so they contribute exactly
    zero loss and leave their parameters' gradients untouched.
    """
    feats = tt.constant(batch.features)
    syn = batch.syntax if model.config.variant != "caption" else None
    enc = encode_inputs(model, feats, syn, v_mask=batch.frame_mask, s_mask=batch.syntax_mask)
    logits_steps, states = decode_teacher_forced_batch(model, enc, batch.tokens)
    cap = caption_loss_from_steps(logits_steps, batch.tokens, batch.target_mask)
    total = cap * config.alpha
    components = {"loss_cap": cap.item(), "loss_vrec": 0.0, "loss_srec": 0.0}
    g_mask = batch.target_mask
    if config.rec_video:
        recon = reconstruct_video_batch(model, states, g_mask, batch.features.shape[1])
        vrec = video_rec_loss(feats, recon, batch.frame_mask)
        total = total + vrec * config.lam
        components["loss_vrec"] = vrec.item()
    if config.rec_syntax:
        srec_steps = reconstruct_syntax_batch(model, states, g_mask, batch.syntax.shape[1])
        srec = syntax_rec_loss(srec_steps, batch.syntax, batch.syntax_mask)
        total = total + srec * config.eta
        components["loss_srec"] = srec.item()
    components["loss_total"] = total.item()
    return total, components


# --- optimizer ----------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment accumulators per parameter plus the step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, Tensor]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
        )


def clip_gradients(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients down to a global norm cap; returns the raw norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= factor
    return norm


def adam_step(
    params: dict[str, Tensor],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam update; missing gradients count as zero."""
    state.step += 1
    t = state.step
    correct1 = 1.0 - beta1**t
    correct2 = 1.0 - beta2**t
    for name, p in params.items():
        grad = p.grad
        if grad is None:
            grad = np.zeros_like(p.data)
        elif not np.all(np.isfinite(grad)):
            raise NonFiniteGradient(f"non-finite gradient for parameter {name}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        p.data -= lr * (m / correct1) / (np.sqrt(v / correct2) + eps)


# --- evaluation during and after training ----------------------------------


@dataclass
class GenerationEval:
    """Held-out generation quality against each video's exemplars."""

    avg_ted: float | None
    avg_cos: float | None
    content_recall: float | None
    predictions: list[dict]


def _exemplar_ids(entry, syntax_vocab: Vocabulary, max_len: int) -> np.ndarray:
    tokens = syntax_tokens_of(entry)[:max_len]
    return np.array(syntax_vocab.encode_sequence(tokens), dtype=np.int64)


def evaluate_generation(
    model: SmcgModel,
    instances,
    word_vocab: Vocabulary,
    syntax_vocab: Vocabulary,
    config: TrainConfig,
    world: SynthWorld | None = None,
    embeddings: EmbeddingTable | None = None,
    limit_videos: int | None = None,
    gen_batch: int = 64,
) -> GenerationEval:
    """Generate one caption per (video, exemplar) pair and score it.

    TED needs a way to parse generated captions, which the synthetic world
    provides via template matching; without one TED and recall are None.
    """
    chosen = instances[:limit_videos] if limit_videos else instances
    pairs = []
    for inst in chosen:
        for ex_idx, entry in enumerate(inst.exemplars):
            pairs.append((inst, ex_idx, entry))
    if not pairs:
        return GenerationEval(None, None, None, [])

    rows: list[list[int]] = []
    for start in range(0, len(pairs), gen_batch):
        block = pairs[start : start + gen_batch]
        m_max = max(inst.features.shape[0] for inst, _, _ in block)
        width = block[0][0].features.shape[1]
        feats = np.zeros((len(block), m_max, width))
        v_mask = np.zeros((len(block), m_max))
        syn_lists = [_exemplar_ids(entry, syntax_vocab, config.max_syntax_len) for _, _, entry in block]
        n_max = max(len(s) for s in syn_lists)
        syn = np.full((len(block), n_max), PAD_ID, dtype=np.int64)
        s_mask = np.zeros((len(block), n_max))
        for i, (inst, _, _) in enumerate(block):
            m = inst.features.shape[0]
            feats[i, :m] = inst.features
            v_mask[i, :m] = 1.0
            syn[i, : len(syn_lists[i])] = syn_lists[i]
            s_mask[i, : len(syn_lists[i])] = 1.0
        if model.config.variant == "caption":
            rows.extend(generate_batch(model, feats, None, v_mask=v_mask))
        else:
            rows.extend(generate_batch(model, feats, syn, v_mask=v_mask, s_mask=s_mask))

    teds, sims, recalls, predictions = [], [], [], []
    for (inst, ex_idx, entry), ids in zip(pairs, rows):
        words = word_vocab.decode_sequence(ids)
        record = {"video_id": inst.video_id, "exemplar_id": ex_idx, "caption": " ".join(words)}
        exemplar_tree = strip_leaves(parse_bracketed(entry.parse))
        if world is not None:
            predicted_tree = strip_leaves(world.parse_caption(words))
            record["parse"] = world.parse_caption(words).serialize()
            teds.append(tree_edit_distance(predicted_tree, exemplar_tree))
            if inst.captions:
                recalls.append(world.content_recall(words, inst.captions[0].text.split()))
        if embeddings is not None and words and inst.captions:
            refs = [c.text.split() for c in inst.captions]
            sims.append(mx.cos_similarity(words, refs, embeddings))
        predictions.append(record)
    return GenerationEval(
        avg_ted=float(np.mean(teds)) if teds else None,
        avg_cos=float(np.mean(sims)) if sims else None,
        content_recall=float(np.mean(recalls)) if recalls else None,
        predictions=predictions,
    )


# --- run loop --------------------------------------------------------------------


@dataclass
class TrainResult:
    model: SmcgModel
    history: list[dict]
    best_epoch: int
    checkpoint_path: str | None


def train_run(
    train_instances,
    val_instances,
    word_vocab: Vocabulary,
    syntax_vocab: Vocabulary,
    config: TrainConfig,
    out_dir: str | None = None,
    world: SynthWorld | None = None,
    embeddings: EmbeddingTable | None = None,
) -> TrainResult:
    """Epochs of shuffled mini-batches with per-epoch held-out evaluation.

    The best parameter snapshot by held-out TED (caption loss breaks ties,
    and stands in when TED is unavailable) is restored at the end and saved
    to ``out_dir/model.smcg`` when an output directory is given.
    """
    items = encode_training_items(train_instances, word_vocab, syntax_vocab, config)
    if not items:
        raise TrainError("no training items")
    feature_width = items[0].features.shape[1]
    model = build_model(
        config.model_config(len(word_vocab), len(syntax_vocab), feature_width), seed=config.seed
    )
    params = model.parameters()
    adam = AdamState.for_params(params)
    shuffle_rng = np.random.default_rng(config.seed)

    history: list[dict] = []
    log_lines: list[str] = []
    best_key = None
    best_snapshot = None
    best_epoch = -1
    step = 0

    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(items))
        sums = {"loss_total": 0.0, "loss_cap": 0.0, "loss_vrec": 0.0, "loss_srec": 0.0}
        batches = 0
        for start in range(0, len(items), config.batch_size):
            batch = collate([items[i] for i in order[start : start + config.batch_size]])
            model.zero_grads()
            with Tape() as tape:
                loss, components = total_loss(model, batch, config)
            if not np.isfinite(components["loss_total"]):
                raise TrainError(f"non-finite loss at epoch {epoch} batch {batches}")
            tape.backward(loss)
            clip_gradients(params, config.grad_clip)
            adam_step(params, adam, config.lr, config.beta1, config.beta2, config.adam_eps)
            for key in sums:
                sums[key] += components[key]
            batches += 1
            step += 1

        record = {
            "step": step,
            "epoch": epoch,
            "loss_total": sums["loss_total"] / batches,
            "loss_cap": sums["loss_cap"] / batches,
            "loss_vrec": sums["loss_vrec"] / batches,
            "loss_srec": sums["loss_srec"] / batches,
            "heldout_TED": None,
            "heldout_COS": None,
        }
        run_eval = val_instances and (epoch % config.eval_every == 0 or epoch == config.epochs - 1)
        if run_eval:
            heldout = evaluate_generation(
                model, val_instances, word_vocab, syntax_vocab, config,
                world=world, embeddings=embeddings, limit_videos=config.eval_videos,
            )
            record["heldout_TED"] = heldout.avg_ted
            record["heldout_COS"] = heldout.avg_cos
        history.append(record)
        log_lines.append(json.dumps(record))
        if out_dir:
            write_atomic(os.path.join(out_dir, "metrics.jsonl"), "\n".join(log_lines) + "\n")

        ted_key = record["heldout_TED"] if record["heldout_TED"] is not None else float("inf")
        key = (ted_key, record["loss_cap"])
        if best_key is None or key < best_key:
            best_key = key
            best_epoch = epoch
            best_snapshot = {name: p.data.copy() for name, p in params.items()}

    if best_snapshot is not None:
        for name, p in params.items():
            p.data = best_snapshot[name]

    checkpoint_path = None
    if out_dir:
        checkpoint_path = os.path.join(out_dir, "model.smcg")
        save_checkpoint(model, checkpoint_path, word_vocab, syntax_vocab)
    return TrainResult(model=model, history=history, best_epoch=best_epoch, checkpoint_path=checkpoint_path)
