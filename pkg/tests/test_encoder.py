import math

import numpy as np
import pytest

from blockbeam import (BlockLayout, ContextState, ContextualBlockEncoder, EncoderOverflowError,
                       EncoderWeights, FeatureSequence, attention, multi_head_attention,
                       segment_blocks, theoretical_delay, tensorio, toy)
from blockbeam.encoder import (AttentionWeights, EncoderLayer, FeedForward, LayerNorm,
                               average_downsample, sinusoidal_positions)


# -- independent oracles (loops, no shared code paths) ------------------------

def oracle_attention(q, k, v):
    out = np.zeros((q.shape[0], v.shape[1]))
    d = q.shape[1]
    for i in range(q.shape[0]):
        scores = [sum(q[i][x] * k[j][x] for x in range(d)) / math.sqrt(d)
                  for j in range(k.shape[0])]
        mx = max(scores)
        weights = [math.exp(s - mx) for s in scores]
        z = sum(weights)
        for j in range(k.shape[0]):
            out[i] += (weights[j] / z) * v[j]
    return out


def oracle_mha(q, k, v, w):
    d = w.d_model // w.n_heads
    parts = []
    for m in range(w.n_heads):
        sl = slice(m * d, (m + 1) * d)
        parts.append(oracle_attention(q @ w.w_q[:, sl], k @ w.w_k[:, sl], v @ w.w_v[:, sl]))
    return np.concatenate(parts, axis=1) @ w.w_o


def oracle_unblocked_forward(weights, seq, layout):
    t = seq.frames.shape[0]
    n = -(-t // layout.downsample)
    rows = np.zeros((n, seq.frames.shape[1]))
    for i in range(n):
        chunk = seq.frames[i * layout.downsample: min((i + 1) * layout.downsample, t)]
        rows[i] = chunk.mean(axis=0)
    z = rows @ weights.input_proj_weight + weights.input_proj_bias
    z = z + sinusoidal_positions(np.arange(n, dtype=float), weights.d_model)
    for layer in weights.layers:
        att = oracle_mha(z, z, z, layer.self_attn) + z
        z = np.maximum(att @ layer.ffn.w1 + layer.ffn.b1, 0.0) @ layer.ffn.w2 + layer.ffn.b2 + att
    mean = z.mean(axis=1, keepdims=True)
    var = z.var(axis=1, keepdims=True)
    return weights.final_ln.gamma * (z - mean) / np.sqrt(var + 1e-12) + weights.final_ln.beta


# -- attention primitives ------------------------------------------------------

def test_attention_uniform_by_symmetry():
    out = attention(np.array([[0.0]]), np.array([[0.0], [0.0]]), np.array([[1.0], [3.0]]))
    assert out == pytest.approx(np.array([[2.0]]))


def test_attention_singleton_key_returns_value():
    rng = np.random.default_rng(0)
    for _ in range(5):
        q = rng.normal(size=(3, 2))
        k = rng.normal(size=(1, 2))
        v = rng.normal(size=(1, 4))
        out = attention(q, k, v)
        assert out == pytest.approx(np.tile(v, (3, 1)))


def test_attention_matches_oracle():
    rng = np.random.default_rng(1)
    for _ in range(10):
        q = rng.normal(size=(3, 2))
        k = rng.normal(size=(3, 2))
        v = rng.normal(size=(3, 2))
        assert attention(q, k, v) == pytest.approx(oracle_attention(q, k, v), abs=1e-9)


def test_attention_rejects_mismatched_shapes():
    with pytest.raises(ValueError):
        attention(np.zeros((2, 3)), np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        attention(np.zeros((2, 2)), np.zeros((3, 2)), np.zeros((2, 2)))


def test_mha_single_head_identity_equals_attention():
    rng = np.random.default_rng(2)
    q = rng.normal(size=(3, 4))
    eye = np.eye(4)
    w = AttentionWeights(eye, eye, eye, eye, n_heads=1)
    assert multi_head_attention(q, q, q, w) == pytest.approx(attention(q, q, q))


def test_mha_zero_output_projection():
    rng = np.random.default_rng(3)
    q = rng.normal(size=(3, 4))
    w = AttentionWeights(np.eye(4), np.eye(4), np.eye(4), np.zeros((4, 4)), n_heads=2)
    assert multi_head_attention(q, q, q, w) == pytest.approx(np.zeros((3, 4)))


def test_mha_two_heads_matches_oracle():
    rng = np.random.default_rng(4)
    w = AttentionWeights(rng.normal(size=(4, 4)), rng.normal(size=(4, 4)),
                         rng.normal(size=(4, 4)), rng.normal(size=(4, 4)), n_heads=2)
    q = rng.normal(size=(5, 4))
    k = rng.normal(size=(6, 4))
    assert multi_head_attention(q, k, k, w) == pytest.approx(oracle_mha(q, k, k, w), abs=1e-9)


def test_mha_head_count_must_divide():
    with pytest.raises(ValueError):
        AttentionWeights(np.eye(4), np.eye(4), np.eye(4), np.eye(4), n_heads=3)


# -- segmentation -------------------------------------------------------------

def test_segment_blocks_hand_enumeration():
    seq = FeatureSequence(np.zeros((128, 3)))  # 32 downsampled frames
    layout = BlockLayout(4, 8, 4, downsample=4)
    blocks = segment_blocks(seq, layout)
    assert [b.center_range for b in blocks] == [(0, 8), (8, 16), (16, 24), (24, 32)]
    assert blocks[1].ctx_start == 4
    assert blocks[1].ctx_start + blocks[1].frames.shape[0] == 20


def test_segment_blocks_single_block():
    seq = FeatureSequence(np.zeros((64, 3)))  # 16 downsampled frames
    layout = BlockLayout(16, 16, 8, downsample=4)
    blocks = segment_blocks(seq, layout)
    assert len(blocks) == 1
    assert blocks[0].center_range == (0, 16)
    assert blocks[0].ctx_start == 0
    assert blocks[0].frames.shape[0] == 16


def test_segment_blocks_short_last_center():
    seq = FeatureSequence(np.zeros((160, 3)))  # 40 downsampled frames
    layout = BlockLayout(16, 16, 8, downsample=4)
    blocks = segment_blocks(seq, layout)
    assert len(blocks) == 3
    assert blocks[2].center_range == (32, 40)


def test_segment_blocks_tiling_completeness_random():
    rng = np.random.default_rng(5)
    for _ in range(300):
        t = int(rng.integers(1, 400))
        ds = int(rng.integers(1, 5))
        layout = BlockLayout(int(rng.integers(0, 6)), int(rng.integers(1, 9)),
                             int(rng.integers(0, 6)), downsample=ds)
        seq = FeatureSequence(np.zeros((t, 2)))
        blocks = segment_blocks(seq, layout)
        n = -(-t // ds)
        covered = []
        for b in blocks:
            covered.extend(range(*b.center_range))
        assert covered == list(range(n))


def test_average_downsample_tail():
    x = np.arange(7, dtype=float).reshape(7, 1)
    out = average_downsample(x, 4)
    assert out[:, 0] == pytest.approx([1.5, 5.0])


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        FeatureSequence(np.zeros((0, 3)))


# -- theoretical delay ----------------------------------------------------------

def test_theoretical_delay_values():
    assert theoretical_delay(BlockLayout(16, 16, 8, 4, 10.0)) == pytest.approx(0.64)
    assert theoretical_delay(BlockLayout(16, 8, 8, 4, 10.0)) == pytest.approx(0.32)
    assert theoretical_delay(BlockLayout(16, 16, 8, 1, 10.0)) == pytest.approx(0.16)


# -- block encoding --------------------------------------------------------------

def zero_weights(feat_dim=3, d_model=4, n_layers=2):
    layer = EncoderLayer(
        AttentionWeights(np.zeros((d_model, d_model)), np.zeros((d_model, d_model)),
                         np.zeros((d_model, d_model)), np.zeros((d_model, d_model)), 2),
        FeedForward(np.zeros((d_model, 8)), np.zeros(8), np.zeros((8, d_model)), np.zeros(d_model)))
    return EncoderWeights(
        input_proj_weight=np.zeros((feat_dim, d_model)),
        input_proj_bias=np.zeros(d_model),
        layers=(layer,) * n_layers,
        final_ln=LayerNorm(np.zeros(d_model), np.zeros(d_model)))


def test_all_zero_weights_yield_zero_blocks():
    seq = FeatureSequence(np.ones((40, 3)))
    layout = BlockLayout(4, 8, 4, downsample=4)
    enc = ContextualBlockEncoder(zero_weights(), layout)
    for block in enc.encode_utterance(seq):
        assert np.all(block.vectors == 0.0)


def test_single_block_equals_unblocked_oracle():
    rng = np.random.default_rng(11)
    w = toy.random_encoder_weights(rng, feat_dim=3, d_model=6, n_layers=2, n_heads=2)
    layout = BlockLayout(16, 16, 8, downsample=4)
    seq = FeatureSequence(rng.normal(size=(60, 3)))  # 15 downsampled frames, one block
    enc = ContextualBlockEncoder(w, layout, use_context=False)
    blocks = enc.encode_utterance(seq)
    assert len(blocks) == 1
    assert blocks[0].is_last
    expected = oracle_unblocked_forward(w, seq, layout)
    assert blocks[0].vectors == pytest.approx(expected, abs=1e-9)


def test_encode_unblocked_helper_matches_oracle():
    rng = np.random.default_rng(12)
    w = toy.random_encoder_weights(rng, feat_dim=4, d_model=8, n_layers=2, n_heads=2)
    layout = BlockLayout(4, 8, 4, downsample=4)
    seq = FeatureSequence(rng.normal(size=(50, 4)))
    enc = ContextualBlockEncoder(w, layout)
    assert enc.encode_unblocked(seq) == pytest.approx(
        oracle_unblocked_forward(w, seq, layout), abs=1e-9)


def test_streaming_causality_bit_identical():
    rng = np.random.default_rng(13)
    w = toy.random_encoder_weights(rng, feat_dim=3, d_model=6, n_layers=2, n_heads=2)
    layout = BlockLayout(4, 8, 4, downsample=4)
    base = rng.normal(size=(128, 3))
    enc = ContextualBlockEncoder(w, layout)
    blocks = enc.encode_utterance(FeatureSequence(base))
    for b in blocks[:-1]:
        horizon = (b.frame_end + layout.n_right) * layout.downsample
        perturbed = base.copy()
        perturbed[horizon:] += 10.0
        got = ContextualBlockEncoder(w, layout).encode_utterance(FeatureSequence(perturbed))
        assert np.array_equal(got[b.index - 1].vectors, b.vectors)


def test_context_chaining_is_live():
    rng = np.random.default_rng(14)
    w = toy.random_encoder_weights(rng, feat_dim=3, d_model=6, n_layers=2, n_heads=2)
    layout = BlockLayout(4, 8, 4, downsample=4)
    seq = FeatureSequence(rng.normal(size=(96, 3)))
    enc = ContextualBlockEncoder(w, layout)
    inputs = segment_blocks(seq, layout)
    ctx = enc.initial_context()
    first, ctx_after = enc.encode_block(inputs[0], ctx)
    chained, _ = enc.encode_block(inputs[1], ctx_after)
    zeroed, _ = enc.encode_block(inputs[1], enc.initial_context())
    assert not np.allclose(chained.vectors, zeroed.vectors)


def test_context_state_mismatch_rejected():
    rng = np.random.default_rng(15)
    w = toy.random_encoder_weights(rng, feat_dim=3, d_model=6, n_layers=2, n_heads=2)
    layout = BlockLayout(4, 8, 4, downsample=4)
    enc = ContextualBlockEncoder(w, layout)
    inputs = segment_blocks(FeatureSequence(rng.normal(size=(64, 3))), layout)
    with pytest.raises(ValueError):
        enc.encode_block(inputs[0], ContextState(np.zeros((1, 6))))


def test_encoder_overflow_detected():
    w = zero_weights()
    big = EncoderWeights(
        input_proj_weight=np.full((3, 4), 1e200),
        input_proj_bias=np.zeros(4),
        layers=w.layers,
        final_ln=LayerNorm(np.full(4, 1e200), np.zeros(4)))
    layout = BlockLayout(2, 4, 2, downsample=1)
    seq = FeatureSequence(np.full((8, 3), 1e200))
    with pytest.raises(EncoderOverflowError, match="numerical overflow"):
        ContextualBlockEncoder(big, layout).encode_utterance(seq)


def test_encode_golden_matrix():
    # frozen after validating the unblocked-forward oracle; guards drift
    rng = np.random.default_rng(1234)
    w = toy.random_encoder_weights(rng, feat_dim=3, d_model=4, n_layers=2, n_heads=2)
    layout = BlockLayout(4, 8, 4, downsample=4)
    seq = FeatureSequence(np.asarray(rng.normal(size=(128, 3))))
    enc = ContextualBlockEncoder(w, layout)
    got = np.concatenate([b.vectors for b in enc.encode_utterance(seq)])
    golden = tensorio.read_tensors("tests/data/encoder_golden.tensors")["golden"]
    assert got == pytest.approx(golden, abs=1e-9)


def test_positional_table_override():
    rng = np.random.default_rng(19)
    w = toy.random_encoder_weights(rng, feat_dim=3, d_model=4, n_layers=1, n_heads=2)
    from dataclasses import replace
    table = sinusoidal_positions(np.arange(64, dtype=float), 4)
    with_table = replace(w, pos_table=table)
    layout = BlockLayout(4, 8, 4, downsample=4)
    seq = FeatureSequence(rng.normal(size=(40, 3)))
    a = ContextualBlockEncoder(w, layout).encode_utterance(seq)
    b = ContextualBlockEncoder(with_table, layout).encode_utterance(seq)
    for x, y in zip(a, b):
        assert x.vectors == pytest.approx(y.vectors, abs=1e-12)
    short = replace(w, pos_table=table[:3])
    with pytest.raises(ValueError, match="positional encoding table"):
        ContextualBlockEncoder(short, layout).encode_utterance(seq)


def test_conv_requires_factor_four():
    rng = np.random.default_rng(20)
    w = toy.random_encoder_weights(rng, feat_dim=3, d_model=6, n_layers=1, n_heads=2,
                                   with_conv=True)
    with pytest.raises(ValueError, match="4x"):
        ContextualBlockEncoder(w, BlockLayout(2, 4, 2, downsample=2))


def test_conv_front_end_shapes_and_causality():
    rng = np.random.default_rng(16)
    w = toy.random_encoder_weights(rng, feat_dim=3, d_model=6, n_layers=1, n_heads=2,
                                   with_conv=True)
    layout = BlockLayout(2, 4, 2, downsample=4)
    base = rng.normal(size=(77, 3))
    enc = ContextualBlockEncoder(w, layout)
    blocks = enc.encode_utterance(FeatureSequence(base))
    assert blocks[-1].frame_end == -(-77 // 4)
    horizon = (blocks[0].frame_end + layout.n_right) * layout.downsample
    perturbed = base.copy()
    perturbed[horizon:] -= 5.0
    got = ContextualBlockEncoder(w, layout).encode_utterance(FeatureSequence(perturbed))
    assert np.array_equal(got[0].vectors, blocks[0].vectors)


# -- file formats -----------------------------------------------------------------

def test_feature_file_round_trip(tmp_path):
    rng = np.random.default_rng(17)
    seq = FeatureSequence(rng.normal(size=(5, 3)), frame_shift_ms=10.0)
    path = tmp_path / "f.feats"
    seq.save(str(path))
    loaded = FeatureSequence.load(str(path))
    assert loaded.frames == pytest.approx(seq.frames)
    assert loaded.frame_shift_ms == seq.frame_shift_ms


def test_feature_file_errors(tmp_path):
    path = tmp_path / "bad.feats"
    path.write_text("2 3 10\n1 2 3\n4 5\n")
    with pytest.raises(ValueError, match="bad.feats:3"):
        FeatureSequence.load(str(path))


def test_tensor_file_round_trip(tmp_path):
    rng = np.random.default_rng(18)
    w = toy.random_encoder_weights(rng, feat_dim=3, d_model=4, n_layers=2, n_heads=2)
    path = tmp_path / "w.tensors"
    tensorio.write_tensors(str(path), w.to_tensors())
    loaded = EncoderWeights.from_tensors(tensorio.read_tensors(str(path)))
    seq = FeatureSequence(rng.normal(size=(40, 3)))
    layout = BlockLayout(4, 8, 4, downsample=4)
    a = ContextualBlockEncoder(w, layout).encode_utterance(seq)
    b = ContextualBlockEncoder(loaded, layout).encode_utterance(seq)
    for x, y in zip(a, b):
        assert np.array_equal(x.vectors, y.vectors)


def test_tensor_file_errors(tmp_path):
    path = tmp_path / "bad.tensors"
    path.write_text("[tensor a 2 2]\n1 2 3\n")
    with pytest.raises(ValueError, match="bad.tensors:1"):
        tensorio.read_tensors(str(path))
    path.write_text("1 2 3\n")
    with pytest.raises(ValueError, match="values before"):
        tensorio.read_tensors(str(path))
