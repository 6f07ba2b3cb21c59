import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lamassu import tensor as T
from lamassu.encoder import ClusteredBlock, ClusteredEncoder, augment_target_lid, gate_vector, pair_frames
from lamassu.nn import DropoutState, TransformerStack, attention_mask
from lamassu.tensor import Tensor
from lamassu.verify import block_fidelity, encoder_stream_gap, tiny_model

NO_DROP = DropoutState(0.0)


def test_augment_target_lid_example():
    out = augment_target_lid(np.array([[5.0, 6.0]]), 1, 3)
    np.testing.assert_array_equal(out, [[5, 6, 0, 1, 0]])
    x = np.random.default_rng(0).normal(size=(7, 2))
    out = augment_target_lid(x, 2, 3)
    assert out.shape == (7, 5)
    np.testing.assert_array_equal(out[:, 2:], np.tile([0, 0, 1], (7, 1)))
    assert augment_target_lid(x, 2, 3, enabled=False) is x
    with pytest.raises(IndexError):
        augment_target_lid(x, 3, 3)


def test_pair_frames_pads_odd_tail():
    x = np.arange(6, dtype=np.float32).reshape(3, 2)
    np.testing.assert_array_equal(pair_frames(x), [[0, 1, 2, 3], [4, 5, 0, 0]])


def test_gate_vectors():
    np.testing.assert_array_equal(gate_vector(1, 2, all_ones=False), [0, 1])
    np.testing.assert_array_equal(gate_vector(None, 2, all_ones=True), [1, 1])
    np.testing.assert_array_equal(gate_vector(None, 1, all_ones=False), [1])
    with pytest.raises(ValueError):
        gate_vector(None, 2, all_ones=False)


def _block(clusters, seed=0, d=8):
    return ClusteredBlock(clusters, d, 2, 1, 1, np.random.default_rng(seed), NO_DROP)


def _terms(block, x, gates):
    with T.no_grad():
        e = [s(Tensor(x[None])) for s in block.separate]
        return e, block.mix_terms(e, np.asarray(gates, np.float32)[None])


def test_single_cluster_weight_is_one():
    block = _block(1)
    x = np.random.default_rng(1).normal(size=(5, 8)).astype(np.float32)
    e, terms = _terms(block, x, [1.0])
    np.testing.assert_array_equal(terms["w_concat"].data, 1.0)
    np.testing.assert_array_equal(terms["s"][0].data, terms["v"][0].data)
    np.testing.assert_array_equal(terms["v"][0].data, e[0].data)


def test_zero_gate_propagation():
    block = _block(2, seed=2)
    x = np.random.default_rng(2).normal(size=(4, 8)).astype(np.float32)
    e, terms = _terms(block, x, [1.0, 0.0])
    assert np.all(terms["v"][1].data == 0.0)
    assert np.all(terms["s"][1].data == 0.0)
    with T.no_grad():
        w_sum = block.proj[0](terms["v"][0]).data + block.proj[1].bias.data
        w_out = block.shared_proj(Tensor(np.tanh(w_sum))).data
        mixed, _ = block.mix(e, np.array([[1.0, 0.0]], np.float32))
    np.testing.assert_allclose(terms["w_out"].data, w_out, atol=1e-6)
    np.testing.assert_array_equal(mixed.data, terms["s"][0].data)


def test_gate_count_mismatch_raises():
    block = _block(2)
    x = np.zeros((1, 3, 8), np.float32)
    with pytest.raises(ValueError):
        block(Tensor(x), np.ones((1, 3), np.float32), None)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 3), st.integers(1, 6), st.integers(0, 2**31))
def test_mixing_weights_are_distributions(clusters, frames, seed):
    block = _block(clusters, seed=seed % 1000)
    rng = np.random.default_rng(seed)
    x = rng.normal(0, 3, size=(frames, 8)).astype(np.float32)
    gates = rng.integers(0, 2, size=clusters).astype(np.float32)
    _, terms = _terms(block, x, gates)
    w = terms["w_concat"].data
    assert np.all((w > 0) & (w < 1)) or clusters == 1
    np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-6)
    for jj in np.flatnonzero(gates == 0):
        assert np.all(terms["s"][jj].data == 0.0)


def test_block_matches_straight_line_reference():
    checks = block_fidelity(n=30, seed=3)
    assert all(c.passed for c in checks), checks


def _encoder(blocks=2, clusters=2, d_in=6, chunk=3, seed=4):
    return ClusteredEncoder(d_in, 8, 2, blocks, clusters, 1, 1, chunk, np.random.default_rng(seed), NO_DROP)


def test_single_block_is_projection_then_block():
    enc = _encoder(blocks=1)
    x = np.random.default_rng(5).normal(size=(1, 6, 6)).astype(np.float32)
    gates = np.ones((1, 2), np.float32)
    with T.no_grad():
        out = enc(x, gates)
        h, w_out = enc.blocks[0](enc.embed(Tensor(x)), gates, attention_mask(3, np.array([6]), 6))
    np.testing.assert_array_equal(out.h_enc.data, h.data)
    np.testing.assert_allclose(out.lid_logit_sums.data, w_out.data.mean(axis=1), atol=1e-6)


def test_lid_logits_sum_blocks_and_average_valid_frames():
    enc = _encoder(blocks=2)
    x = np.random.default_rng(6).normal(size=(2, 5, 6)).astype(np.float32)
    with T.no_grad():
        out = enc(x, np.ones((2, 2), np.float32), lengths=np.array([5, 3]))
    total = out.w_out[0].data + out.w_out[1].data
    np.testing.assert_allclose(out.lid_logit_sums.data[0], total[0].mean(axis=0), atol=1e-6)
    np.testing.assert_allclose(out.lid_logit_sums.data[1], total[1, :3].mean(axis=0), atol=1e-6)


def test_streaming_encoder_matches_offline():
    enc = _encoder(chunk=3)
    rng = np.random.default_rng(7)
    for n in (1, 3, 7, 12):
        assert encoder_stream_gap(enc, rng.normal(size=(n, 6)).astype(np.float32)) < 1e-5


def test_stream_rejects_misaligned_chunks():
    stream = _encoder(chunk=3).stream()
    with pytest.raises(ValueError):
        stream.push(np.zeros((4, 6)))
    stream.push(np.zeros((2, 6)))
    with pytest.raises(RuntimeError):
        stream.push(np.zeros((3, 6)))


def test_all_ones_inference_ignores_source_cluster():
    model = tiny_model(d=16, chunk_frames=4)
    rng = np.random.default_rng(8)
    feats = rng.normal(size=(9, model.d_x)).astype(np.float32)
    # gates are the only input that could carry the source cluster; at
    # inference they are all ones whatever the true j
    with T.no_grad():
        outs = [model.encode(feats[None], 0, gate_vector(j, 2, all_ones=True)[None]).h_enc.data for j in (0, 1)]
    np.testing.assert_array_equal(outs[0], outs[1])


def test_target_lid_changes_encoder_output():
    model = tiny_model(d=16, chunk_frames=4)
    feats = np.random.default_rng(9).normal(size=(6, model.d_x)).astype(np.float32)
    with T.no_grad():
        h0 = model.encode(feats[None], 0, np.ones((1, 2))).h_enc.data
        h1 = model.encode(feats[None], 1, np.ones((1, 2))).h_enc.data
    assert np.max(np.abs(h0 - h1)) > 0


def test_single_cluster_encoder_is_a_plain_stack():
    # J=1: w_concat == 1, so each block is separate stack then shared stack
    enc = _encoder(blocks=2, clusters=1)
    x = np.random.default_rng(10).normal(size=(1, 7, 6)).astype(np.float32)
    with T.no_grad():
        got = enc(x, np.ones((1, 1), np.float32), chunk_frames=7).h_enc.data
        plain = TransformerStack(4, 8, 2, np.random.default_rng(0), NO_DROP)
        plain.layers = [layer for blk in enc.blocks for stack in (blk.separate[0], blk.shared)
                        for layer in stack.layers]
        want = plain(enc.embed(Tensor(x)), None).data
    np.testing.assert_allclose(got, want, atol=1e-6)
