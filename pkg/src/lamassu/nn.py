"""Neural building blocks on top of :mod:`lamassu.tensor`.

Transformer layers are pre-layer-norm. Streaming is handled by a chunk mask
(full left context, no lookahead) for whole-utterance forwards, and by
per-layer key/value caches for chunk-incremental forwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


class DropoutState:
    """Shared switch for dropout: one instance per model."""

    def __init__(self, p: float = 0.1):
        self.p = p
        self.training = False
        self.rng: np.random.Generator | None = None


class Module:
    """Minimal parameter container. Parameters are discovered in attribute order."""

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((full, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(full + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{full}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / math.sqrt(d_in)
        self.weight = T.parameter(rng.uniform(-bound, bound, size=(d_out, d_in)))
        self.bias = T.parameter(rng.uniform(-bound, bound, size=(d_out,))) if bias else None
        self.d_in, self.d_out = d_in, d_out

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise T.DimensionError(f"Linear expects last dim {self.d_in}, got {x.shape}")
        if x.ndim == 1:
            return T.reshape(self(T.reshape(x, (1, -1))), (-1,))
        y = T.matmul(x, T.transpose(self.weight))
        if self.bias is not None:
            y = y + self.bias
        return y


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = T.parameter(np.ones(d))
        self.beta = T.parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class Embedding(Module):
    def __init__(self, n: int, d: int, rng: np.random.Generator):
        self.weight = T.parameter(rng.normal(0.0, 1.0 / math.sqrt(d), size=(n, d)))

    def __call__(self, ids) -> Tensor:
        return T.embedding(self.weight, ids)


@dataclass(frozen=True)
class ChunkMask:
    """Streaming attention mask: frame t sees frame s iff chunk(s) <= chunk(t)."""

    chunk_size: int
    num_frames: int

    def __post_init__(self):
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")

    def allowed(self, t: int, s: int) -> bool:
        return s // self.chunk_size <= t // self.chunk_size

    def matrix(self) -> np.ndarray:
        idx = np.arange(self.num_frames) // self.chunk_size
        return idx[None, :] <= idx[:, None]

    def chunk_end(self, t: int) -> int:
        """Index one past the last frame of t's chunk, clipped to the utterance."""
        return min((t // self.chunk_size + 1) * self.chunk_size, self.num_frames)


def attention_mask(chunk_size: int, lengths: np.ndarray, num_frames: int) -> np.ndarray:
    """Boolean [B, 1, T, T] mask combining the chunk mask with key validity."""
    chunk = ChunkMask(chunk_size, num_frames).matrix()
    valid = np.arange(num_frames)[None, :] < np.asarray(lengths)[:, None]
    mask = chunk[None, :, :] & valid[:, None, :]
    # padded query rows still need one allowed key
    mask |= np.eye(num_frames, dtype=bool)[None]
    return mask[:, None, :, :]


def sinusoidal_positions(num_frames: int, d: int, offset: int = 0) -> np.ndarray:
    pos = np.arange(offset, offset + num_frames, dtype=np.float64)[:, None]
    i = np.arange(0, d, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, i / d)
    pe = np.zeros((num_frames, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe.astype(np.float32)


class MultiHeadAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if d % heads:
            raise ValueError(f"model dim {d} not divisible by {heads} heads")
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.out = Linear(d, d, rng)
        self.heads = heads
        self.d = d

    def _split(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return T.transpose(T.reshape(x, (b, t, self.heads, self.d // self.heads)), (0, 2, 1, 3))

    def _merge(self, x: Tensor) -> Tensor:
        b, _, t, _ = x.shape
        return T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, t, self.d))

    def weights(self, q: Tensor, k: Tensor, mask: np.ndarray | None) -> Tensor:
        scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(self.d // self.heads))
        return T.softmax(scores, axis=-1, mask=mask)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        if x.shape[1] == 0:
            raise T.DimensionError("attention over zero frames")
        q, k, v = self._split(self.q(x)), self._split(self.k(x)), self._split(self.v(x))
        att = self.weights(q, k, mask)
        return self.out(self._merge(T.matmul(att, v)))

    def step(self, x: Tensor, cache: dict) -> Tensor:
        """Process a whole chunk attending to cached keys/values plus itself."""
        q, k, v = self._split(self.q(x)), self._split(self.k(x)), self._split(self.v(x))
        if cache.get("k") is not None:
            k = T.concat([cache["k"], k], axis=2)
            v = T.concat([cache["v"], v], axis=2)
        cache["k"], cache["v"] = k, v
        att = self.weights(q, k, None)
        return self.out(self._merge(T.matmul(att, v)))


class TransformerLayer(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator, drop: DropoutState):
        self.norm1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng)
        self.norm2 = LayerNorm(d)
        self.ff1 = Linear(d, 4 * d, rng)
        self.ff2 = Linear(4 * d, d, rng)
        self._drop = drop

    def _dropout(self, x: Tensor) -> Tensor:
        return T.dropout(x, self._drop.p, self._drop.rng, self._drop.training)

    def _feed_forward(self, h: Tensor) -> Tensor:
        return h + self._dropout(self.ff2(T.relu(self.ff1(self.norm2(h)))))

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        h = x + self._dropout(self.attn(self.norm1(x), mask))
        return self._feed_forward(h)

    def step(self, x: Tensor, cache: dict) -> Tensor:
        h = x + self._dropout(self.attn.step(self.norm1(x), cache))
        return self._feed_forward(h)


class TransformerStack(Module):
    def __init__(self, n_layers: int, d: int, heads: int, rng: np.random.Generator, drop: DropoutState):
        self.layers = [TransformerLayer(d, heads, rng, drop) for _ in range(n_layers)]

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        for layer in self.layers:
            x = layer(x, mask)
        return x

    def step(self, x: Tensor, caches: list[dict]) -> Tensor:
        for layer, cache in zip(self.layers, caches):
            x = layer.step(x, cache)
        return x

    def new_caches(self) -> list[dict]:
        return [{} for _ in self.layers]


class LSTMCell(Module):
    """Gate order in the packed weights: input, forget, cell, output."""

    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(d_hidden)
        self.w_ih = T.parameter(rng.uniform(-bound, bound, size=(d_in, 4 * d_hidden)))
        self.w_hh = T.parameter(rng.uniform(-bound, bound, size=(d_hidden, 4 * d_hidden)))
        self.bias = T.parameter(rng.uniform(-bound, bound, size=(4 * d_hidden,)))
        self.d_in, self.d_hidden = d_in, d_hidden

    def zero_state(self, batch: int) -> tuple[Tensor, Tensor]:
        z = np.zeros((batch, self.d_hidden), dtype=np.float32)
        return Tensor(z), Tensor(z.copy())

    def __call__(self, x: Tensor, state: tuple[Tensor, Tensor]) -> tuple[Tensor, tuple[Tensor, Tensor]]:
        h, c = state
        if x.shape[-1] != self.d_in or h.shape[-1] != self.d_hidden:
            raise T.DimensionError("LSTM input/state dims do not match the cell")
        z = T.matmul(x, self.w_ih) + T.matmul(h, self.w_hh) + self.bias
        n = self.d_hidden
        i = T.sigmoid(z[..., 0:n])
        f = T.sigmoid(z[..., n:2 * n])
        g = T.tanh(z[..., 2 * n:3 * n])
        o = T.sigmoid(z[..., 3 * n:])
        c_new = f * c + i * g
        h_new = o * T.tanh(c_new)
        return h_new, (h_new, c_new)


def lstm_step(cell: LSTMCell, x_u: Tensor, state):
    return cell(x_u, state)


class LSTM(Module):
    """Stack of LSTM cells applied step by step."""

    def __init__(self, n_layers: int, d_in: int, d_hidden: int, rng: np.random.Generator):
        self.cells = [LSTMCell(d_in if i == 0 else d_hidden, d_hidden, rng) for i in range(n_layers)]

    def zero_state(self, batch: int) -> list[tuple[Tensor, Tensor]]:
        return [cell.zero_state(batch) for cell in self.cells]

    def step(self, x: Tensor, states):
        new_states = []
        for cell, st in zip(self.cells, states):
            x, st = cell(x, st)
            new_states.append(st)
        return x, new_states

    def __call__(self, x: Tensor, states=None) -> Tensor:
        """Run over x [B, U, d_in]; returns [B, U, d_hidden]."""
        b, u, _ = x.shape
        states = states or self.zero_state(b)
        outs = []
        for step in range(u):
            h, states = self.step(x[:, step, :], states)
            outs.append(h)
        return T.stack(outs, axis=1)
