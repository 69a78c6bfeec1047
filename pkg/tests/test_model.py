"""Encoder/decoder assembly, generation, and checkpoint persistence."""

import numpy as np
import pytest

from smcg import model as M
from smcg import nn
from smcg import tensor as tt
from smcg.data import BOS_ID, EOS_ID, Vocabulary
from smcg.tensor import Tape, Tensor, grad_check


def _config(**overrides):
    base = dict(
        word_vocab=10,
        syntax_vocab=8,
        feature_width=5,
        hidden=6,
        word_emb=4,
        syntax_emb=4,
        attn=4,
    )
    base.update(overrides)
    return M.ModelConfig(**base)


def _model(seed=0, **overrides):
    return M.build_model(_config(**overrides), seed=seed)


def _tokens(*words):
    return np.array([BOS_ID, *words, EOS_ID], dtype=np.int64)


def test_encode_video_single_frame_matches_lstm_step():
    model = _model()
    rng = np.random.default_rng(1)
    frame = rng.normal(size=(1, 5))
    states = M.encode_video(model, frame)
    h, _ = nn.lstm_step(
        model.encoder_v,
        Tensor(frame[0]),
        Tensor(np.zeros(6)),
        Tensor(np.zeros(6)),
    )
    assert states.shape == (1, 6)
    assert np.allclose(states.data[0], h.data)


def test_encode_video_zero_features_zero_weights():
    model = _model()
    for t in nn.lstm_tensors(model.encoder_v):
        t.data[...] = 0.0
    states = M.encode_video(model, np.zeros((4, 5)))
    assert np.allclose(states.data, 0.0)


def test_encode_video_rejects_empty():
    with pytest.raises(M.EmptyVideo):
        M.encode_video(_model(), np.zeros((0, 5)))


def test_encode_syntax_determinism_and_order_sensitivity():
    model = _model(seed=3)
    ids = np.array([4, 5, 6, 4])
    first = M.encode_syntax(model, ids)
    second = M.encode_syntax(model, ids)
    assert np.array_equal(first.data, second.data)
    permuted = M.encode_syntax(model, ids[::-1].copy())
    assert not np.allclose(first.data, permuted.data)
    with pytest.raises(M.EmptySequence):
        M.encode_syntax(model, np.zeros(0, dtype=np.int64))


def test_decode_teacher_forced_shapes_and_replay():
    model = _model(seed=4)
    rng = np.random.default_rng(4)
    feats = rng.normal(size=(3, 5))
    syn = np.array([4, 5, 6])
    enc = M.encode_inputs(model, feats, syn)
    target = _tokens(4, 7, 5)
    logits, states = M.decode_teacher_forced(model, enc, target)
    assert logits.shape == (4, 10)
    assert states.shape == (4, 6)
    again, _ = M.decode_teacher_forced(model, M.encode_inputs(model, feats, syn), target)
    assert np.array_equal(logits.data, again.data)


def test_decode_single_step_target():
    model = _model(seed=5)
    enc = M.encode_inputs(model, np.zeros((2, 5)), np.array([4]))
    logits, states = M.decode_teacher_forced(model, enc, np.array([BOS_ID, EOS_ID]))
    assert logits.shape == (1, 10)
    assert states.shape == (1, 6)


def test_decode_target_too_long():
    model = _model(seed=6, max_len=3)
    enc = M.encode_inputs(model, np.zeros((2, 5)), np.array([4]))
    with pytest.raises(M.TargetTooLong):
        M.decode_teacher_forced(model, enc, np.arange(6) % 4 + 4)


def test_padded_frames_get_zero_attention():
    model = _model(seed=7)
    rng = np.random.default_rng(7)
    feats = rng.normal(size=(1, 4, 5))
    v_mask = np.array([[1.0, 1.0, 0.0, 0.0]])
    enc = M.encode_inputs(model, feats, np.array([[4, 5]]), v_mask=v_mask)
    h = Tensor(rng.normal(size=(1, 6)))
    _, weights = nn.attention(model.attn_v, h, enc.h_v, enc.v_mask)
    assert weights.data[0, 2] == 0.0 and weights.data[0, 3] == 0.0


def test_reconstruct_video_shapes_and_zero_case():
    model = _model(seed=8)
    states = Tensor(np.zeros((3, 6)))
    out = M.reconstruct_video(model, states, m=4)
    assert out.shape == (4, 5)
    for t in nn.lstm_tensors(model.rec_v):
        t.data[...] = 0.0
    out = M.reconstruct_video(model, Tensor(np.zeros((3, 6))), m=2)
    assert np.allclose(out.data, 0.0)
    with pytest.raises(M.EmptyDecoderStates):
        M.reconstruct_video(model, Tensor(np.zeros((0, 6))), m=2)


def test_reconstruct_syntax_rows_are_distributions():
    model = _model(seed=9)
    rng = np.random.default_rng(9)
    states = Tensor(rng.normal(size=(3, 6)))
    logits = M.reconstruct_syntax(model, states, n=5)
    assert logits.shape == (5, 8)
    probs = tt.softmax(logits).data
    assert np.all(np.abs(probs.sum(axis=-1) - 1.0) <= 1e-12)
    single = M.reconstruct_syntax(model, states, n=1)
    assert single.shape == (1, 8)


def test_full_decode_loss_gradcheck():
    model = _model(seed=10)
    rng = np.random.default_rng(10)
    # generic O(1) parameters: the training init leaves attention nearly
    # uninformative, which drives some true gradients under the roundoff
    # floor of the central difference
    for p in model.parameters().values():
        p.data = rng.normal(size=p.data.shape) * 0.5
    feats = Tensor(rng.normal(size=(2, 5)), requires_grad=True, name="features")
    syn = np.array([4, 6, 5])
    target = _tokens(4, 8)
    params = list(model.parameters().values())

    def build(feats, *rest):
        enc = M.encode_inputs(model, tt.reshape(feats, (1, 2, 5)), syn[None, :])
        logits_steps, states = M.decode_teacher_forced_batch(model, enc, target[None, :])
        total = tt.constant(np.zeros(()))
        for t, logits in enumerate(logits_steps):
            total = total + tt.reduce_sum(tt.cross_entropy(logits, target[None, t + 1]))
        recon = M.reconstruct_video_batch(model, states, np.ones((1, len(logits_steps))), 2)
        total = total + tt.reduce_sum(tt.squared_l2(recon, tt.reshape(feats, (1, 2, 5))))
        # keep the probe loss small so difference noise stays below the
        # 1e-8 floor in the relative-error denominator
        return total * 1e-3

    err = grad_check(build, [feats] + params, samples=4)
    assert err < 1e-4


def test_generate_terminates_and_never_emits_bos():
    model = _model(seed=11)
    rng = np.random.default_rng(11)
    feats = rng.normal(size=(3, 5))
    syn = np.array([4, 5])
    words = M.generate(model, feats, syn, mode="greedy")
    assert len(words) <= model.config.max_len
    assert BOS_ID not in words and EOS_ID not in words


def test_beam_one_equals_greedy():
    for seed in range(5):
        model = _model(seed=seed)
        rng = np.random.default_rng(100 + seed)
        feats = rng.normal(size=(3, 5))
        syn = np.array([4, 5, 6])
        assert M.generate(model, feats, syn, "beam:1") == M.generate(model, feats, syn, "greedy")


def test_generate_batch_matches_single():
    model = _model(seed=12)
    rng = np.random.default_rng(12)
    feats = rng.normal(size=(3, 4, 5))
    syn = np.array([[4, 5, 6], [5, 6, 4], [6, 4, 5]])
    batch = M.generate_batch(model, feats, syn)
    for i in range(3):
        assert batch[i] == M.generate(model, feats[i], syn[i], "greedy")


def test_caption_variant_ignores_syntax():
    model = _model(seed=13, variant="caption")
    rng = np.random.default_rng(13)
    feats = rng.normal(size=(3, 5))
    assert model.syntax_emb is None
    words = M.generate(model, feats, None, mode="greedy")
    assert isinstance(words, list)


def test_concat_variant_decodes():
    model = _model(seed=14, variant="concat")
    assert model.decoder.modulation is None
    assert model.decoder.lstm.w_x.shape[1] == 4 + 6 + 6
    enc = M.encode_inputs(model, np.zeros((2, 5)), np.array([4, 5]))
    logits, _ = M.decode_teacher_forced(model, enc, _tokens(4))
    assert logits.shape == (2, 10)


def test_checkpoint_round_trip_preserves_values_and_outputs(tmp_path):
    model = _model(seed=15)
    word_vocab = Vocabulary([f"w{i}" for i in range(6)])
    syntax_vocab = Vocabulary(["(", ")", "NP", "DT"])
    path = str(tmp_path / "model.smcg")
    M.save_checkpoint(model, path, word_vocab, syntax_vocab)

    loaded, wv, sv = M.load_checkpoint(path)
    assert wv.tokens == word_vocab.tokens
    assert sv.tokens == syntax_vocab.tokens
    for name, tensor in model.parameters().items():
        stored = tensor.data.astype(np.float32).astype(np.float64)
        assert np.array_equal(loaded.parameters()[name].data, stored), name

    # saving the loaded model again is byte-identical (float32 fixpoint)
    path2 = str(tmp_path / "model2.smcg")
    M.save_checkpoint(loaded, path2, wv, sv)
    with open(path, "rb") as fa, open(path2, "rb") as fb:
        assert fa.read() == fb.read()

    rng = np.random.default_rng(15)
    feats = rng.normal(size=(3, 5))
    syn = np.array([4, 5, 6])
    first = M.generate(loaded, feats, syn, "greedy")
    again, _, _ = M.load_checkpoint(path)
    assert M.generate(again, feats, syn, "greedy") == first


def test_checkpoint_binary_layout(tmp_path):
    model = _model(seed=16)
    path = str(tmp_path / "m.smcg")
    M.save_checkpoint(model, path, Vocabulary(["x"]), Vocabulary(["("]))
    with open(path, "rb") as handle:
        blob = handle.read()
    assert blob[:4] == b"SMCG"
    version, count = np.frombuffer(blob[4:12], dtype="<u4")
    assert version == 1
    assert count == len(model.parameters())


def test_encoder_mean_init_differs_from_zeros():
    rng = np.random.default_rng(17)
    feats = rng.normal(size=(3, 5))
    syn = np.array([4, 5])
    a = _model(seed=18)
    b = _model(seed=18, decoder_init="encoder-mean")
    enc_a = M.encode_inputs(a, feats, syn)
    enc_b = M.encode_inputs(b, feats, syn)
    la, _ = M.decode_teacher_forced(a, enc_a, _tokens(4))
    lb, _ = M.decode_teacher_forced(b, enc_b, _tokens(4))
    assert not np.allclose(la.data, lb.data)
