"""Clustered multilingual encoder.

Each block runs J per-cluster Transformer stacks, scales their outputs by
external per-utterance gates, mixes them with weights estimated from the
gated outputs, and feeds the mixture to a shared Transformer stack. The
per-block weight-estimation logits are also summed into the LID logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import (DropoutState, Linear, Module, TransformerStack, attention_mask,
                 sinusoidal_positions)
from .tensor import Tensor


def augment_target_lid(x: np.ndarray, k: int, num_targets: int, enabled: bool = True) -> np.ndarray:
    """Append the one-hot of target language k to every frame of x [..., T, d_x]."""
    if not enabled:
        return x
    if not 0 <= k < num_targets:
        raise IndexError(f"target language {k} out of range [0, {num_targets})")
    onehot = np.zeros(x.shape[:-1] + (num_targets,), dtype=x.dtype)
    onehot[..., k] = 1
    return np.concatenate([x, onehot], axis=-1)


def pair_frames(x: np.ndarray) -> np.ndarray:
    """Stride-2 subsampling by concatenating frame pairs; odd tails are zero-padded."""
    if x.shape[-2] % 2:
        pad = np.zeros(x.shape[:-2] + (1, x.shape[-1]), dtype=x.dtype)
        x = np.concatenate([x, pad], axis=-2)
    return x.reshape(x.shape[:-2] + (x.shape[-2] // 2, 2 * x.shape[-1]))


def gate_vector(j: int | None, clusters: int, all_ones: bool) -> np.ndarray:
    """One-hot on cluster j (phase 1) or all ones (phase 2 and inference)."""
    if all_ones or clusters == 1:
        return np.ones(clusters, dtype=np.float32)
    if j is None or not 0 <= j < clusters:
        raise ValueError(f"phase-1 gates need a source cluster in [0, {clusters})")
    g = np.zeros(clusters, dtype=np.float32)
    g[j] = 1.0
    return g


@dataclass
class EncoderOutput:
    h_enc: Tensor              # [B, T, d]
    lid_logit_sums: Tensor     # [B, J]
    w_out: list[Tensor]        # per block, [B, T, J]
    lengths: np.ndarray


class ClusteredBlock(Module):
    def __init__(self, clusters: int, d: int, heads: int, separate_layers: int, shared_layers: int,
                 rng: np.random.Generator, drop: DropoutState):
        if clusters < 1:
            raise ValueError("need at least one cluster")
        self.separate = [TransformerStack(separate_layers, d, heads, rng, drop) for _ in range(clusters)]
        self.proj = [Linear(d, d, rng) for _ in range(clusters)]
        self.shared_proj = Linear(d, clusters, rng)
        self.shared = TransformerStack(shared_layers, d, heads, rng, drop)
        self.clusters = clusters

    def mix_terms(self, e: list[Tensor], gates: np.ndarray) -> dict:
        """Gated outputs v_j, weight logits w_out, weights w_concat and products s_j."""
        g = np.asarray(gates, dtype=np.float32)
        if g.shape[-1] != self.clusters:
            raise ValueError(f"gate vector has {g.shape[-1]} entries for {self.clusters} clusters")
        g = g.reshape(-1, 1, 1, self.clusters)
        v = [T.mul(e[j], Tensor(g[..., j])) for j in range(self.clusters)]
        w_sum = self.proj[0](v[0])
        for j in range(1, self.clusters):
            w_sum = w_sum + self.proj[j](v[j])
        w_out = self.shared_proj(T.tanh(w_sum))
        w_concat = T.softmax(w_out, axis=-1)
        s = [T.mul(w_concat[..., j:j + 1], v[j]) for j in range(self.clusters)]
        return {"v": v, "w_out": w_out, "w_concat": w_concat, "s": s}

    def mix(self, e: list[Tensor], gates: np.ndarray) -> tuple[Tensor, Tensor]:
        """Shared-module input (sum of s_j) and the weight logits."""
        terms = self.mix_terms(e, gates)
        mixed = terms["s"][0]
        for s_j in terms["s"][1:]:
            mixed = mixed + s_j
        return mixed, terms["w_out"]

    def __call__(self, h_prev: Tensor, gates: np.ndarray, mask: np.ndarray | None):
        e = [stack(h_prev, mask) for stack in self.separate]
        mixed, w_out = self.mix(e, gates)
        return self.shared(mixed, mask), w_out

    def step(self, h_prev: Tensor, gates: np.ndarray, cache: dict):
        e = [stack.step(h_prev, cache["separate"][j]) for j, stack in enumerate(self.separate)]
        mixed, w_out = self.mix(e, gates)
        return self.shared.step(mixed, cache["shared"]), w_out

    def new_cache(self) -> dict:
        return {"separate": [s.new_caches() for s in self.separate], "shared": self.shared.new_caches()}


def block_forward(block: ClusteredBlock, h_prev: Tensor, gates, mask):
    return block(h_prev, gates, mask)


class ClusteredEncoder(Module):
    def __init__(self, d_in: int, d: int, heads: int, blocks: int, clusters: int, separate_layers: int,
                 shared_layers: int, chunk_frames: int, rng: np.random.Generator, drop: DropoutState):
        self.input_proj = Linear(d_in, d, rng)
        self.blocks = [ClusteredBlock(clusters, d, heads, separate_layers, shared_layers, rng, drop)
                       for _ in range(blocks)]
        self.d = d
        self.d_in = d_in
        self.clusters = clusters
        self.chunk_frames = chunk_frames

    def embed(self, x: Tensor, offset: int = 0) -> Tensor:
        h = self.input_proj(x)
        return h + Tensor(sinusoidal_positions(x.shape[-2], self.d, offset))

    def __call__(self, x: np.ndarray, gates: np.ndarray, lengths=None,
                 chunk_frames: int | None = None) -> EncoderOutput:
        """x [B, T, d_in] (already augmented), gates [B, J]."""
        x = np.asarray(x, dtype=np.float32)
        b_sz, n_frames, _ = x.shape
        lengths = np.full(b_sz, n_frames) if lengths is None else np.asarray(lengths)
        gates = np.broadcast_to(np.asarray(gates, dtype=np.float32), (b_sz, self.clusters))
        mask = attention_mask(chunk_frames or self.chunk_frames, lengths, n_frames)
        h = self.embed(Tensor(x))
        w_outs = []
        for block in self.blocks:
            h, w_out = block(h, gates, mask)
            w_outs.append(w_out)
        valid = (np.arange(n_frames)[None, :] < lengths[:, None]).astype(np.float32)
        weights = Tensor((valid / valid.sum(axis=1, keepdims=True))[:, :, None])
        total = w_outs[0]
        for w in w_outs[1:]:
            total = total + w
        lid = T.tsum(T.mul(total, weights), axis=1)
        return EncoderOutput(h, lid, w_outs, lengths)

    def stream(self, gates: np.ndarray | None = None) -> "EncoderStream":
        return EncoderStream(self, gates)


def encoder_forward(encoder: ClusteredEncoder, x_aug, gates, lengths=None) -> EncoderOutput:
    return encoder(x_aug, gates, lengths)


class EncoderStream:
    """Chunk-incremental encoder for one utterance, equal to the chunk-masked full forward.

    Chunks must be pushed at the encoder's chunk boundaries (only the final
    chunk may be short).
    """

    def __init__(self, encoder: ClusteredEncoder, gates: np.ndarray | None = None):
        self.encoder = encoder
        self.gates = np.ones((1, encoder.clusters), np.float32) if gates is None else \
            np.asarray(gates, np.float32).reshape(1, -1)
        self.caches = [b.new_cache() for b in encoder.blocks]
        self.offset = 0
        self.closed = False

    def push(self, chunk: np.ndarray) -> Tensor:
        """chunk [C, d_in] -> encoder frames [C, d]."""
        if self.closed:
            raise RuntimeError("a short chunk already ended this stream")
        chunk = np.asarray(chunk, dtype=np.float32)
        n = chunk.shape[0]
        if n > self.encoder.chunk_frames:
            raise ValueError("chunk larger than the encoder's chunk size")
        if n < self.encoder.chunk_frames:
            self.closed = True
        with T.no_grad():
            h = self.encoder.embed(Tensor(chunk[None]), self.offset)
            for block, cache in zip(self.encoder.blocks, self.caches):
                h, _ = block.step(h, self.gates, cache)
        self.offset += n
        return Tensor(h.data[0])
