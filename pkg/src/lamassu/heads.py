"""Prediction/joint networks, vocabularies and the SPE/UNI head banks.

Output inventory of every joint network: id 0 is blank, id 1 is EOS and the
content tokens follow. The prediction network additionally embeds start
tokens placed after the output inventory: one start-of-sentence token per SPE
head, or K target-LID tokens for the UNI head. Start tokens are never valid
outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import LSTM, Embedding, Linear, Module
from .tensor import Tensor

BLANK = 0
EOS = 1
N_SPECIAL = 2


@dataclass
class VocabularySpec:
    per_language: list[list[str]]
    merged: list[str]
    remap: list[list[int]]

    blank_id: int = BLANK
    eos_id: int = EOS

    @property
    def num_languages(self) -> int:
        return len(self.per_language)

    @property
    def lid_token_ids(self) -> list[int]:
        base = len(self.merged) + N_SPECIAL
        return [base + k for k in range(self.num_languages)]

    def language_tokens(self, k: int | None) -> list[str]:
        return self.merged if k is None else self.per_language[k]

    def output_size(self, k: int | None) -> int:
        """Joint output width for head k (None for the merged UNI head)."""
        return len(self.language_tokens(k)) + N_SPECIAL

    def encode(self, tokens: list[str], k: int | None) -> list[int]:
        table = {t: i + N_SPECIAL for i, t in enumerate(self.language_tokens(k))}
        try:
            return [table[t] for t in tokens]
        except KeyError as err:
            raise ValueError(f"token {err.args[0]!r} not in vocabulary") from None

    def decode(self, ids: list[int], k: int | None) -> list[str]:
        toks = self.language_tokens(k)
        out = []
        for i in ids:
            if i < N_SPECIAL or i - N_SPECIAL >= len(toks):
                raise ValueError(f"id {i} is not a content token")
            out.append(toks[i - N_SPECIAL])
        return out

    def to_dict(self) -> dict:
        return {"per_language": self.per_language}

    @classmethod
    def from_dict(cls, d: dict) -> "VocabularySpec":
        return merge_vocabularies(d["per_language"])


def merge_vocabularies(per_language: list[list[str]]) -> VocabularySpec:
    """First-seen-stable union of the per-language token lists."""
    if not per_language or any(len(toks) == 0 for toks in per_language):
        raise ValueError("vocabularies must be nonempty")
    merged: list[str] = []
    index: dict[str, int] = {}
    remap = []
    for k, toks in enumerate(per_language):
        if len(set(toks)) != len(toks):
            dup = sorted({t for t in toks if toks.count(t) > 1})
            raise ValueError(f"language {k} lists duplicate tokens: {dup}")
        row = []
        for t in toks:
            if t not in index:
                index[t] = len(merged)
                merged.append(t)
            row.append(index[t])
        remap.append(row)
    return VocabularySpec([list(t) for t in per_language], merged, remap)


class PredictionNetwork(Module):
    def __init__(self, n_inputs: int, d_p: int, layers: int, rng: np.random.Generator):
        self.embed = Embedding(n_inputs, d_p, rng)
        self.lstm = LSTM(layers, d_p, d_p, rng)
        self.n_inputs = n_inputs

    def __call__(self, ids: np.ndarray) -> Tensor:
        """Teacher-forced pass over ids [B, U+1] -> [B, U+1, d_p]."""
        return self.lstm(self.embed(ids))

    def zero_state(self, batch: int = 1):
        return self.lstm.zero_state(batch)

    def step(self, ids: np.ndarray, state):
        return self.lstm.step(self.embed(np.asarray(ids)), state)


class JointNetwork(Module):
    def __init__(self, d: int, d_p: int, d_j: int, n_out: int, rng: np.random.Generator):
        self.linear_enc = Linear(d, d_j, rng)
        self.linear_pred = Linear(d_p, d_j, rng)
        self.linear_out = Linear(d_j, n_out, rng)
        self.n_out = n_out

    def __call__(self, h_enc: Tensor, h_pred: Tensor) -> Tensor:
        """Lattice logits: h_enc [B, T, d], h_pred [B, U+1, d_p] -> [B, T, U+1, n_out]."""
        e = T.reshape(self.linear_enc(h_enc), (h_enc.shape[0], h_enc.shape[1], 1, -1))
        p = T.reshape(self.linear_pred(h_pred), (h_pred.shape[0], 1, h_pred.shape[1], -1))
        return self.linear_out(T.tanh(e + p))

    def joint_forward(self, h_enc_t: Tensor, h_pred_u: Tensor) -> Tensor:
        return self.linear_out(T.tanh(self.linear_enc(h_enc_t) + self.linear_pred(h_pred_u)))

    def ctc_forward(self, h_enc: Tensor) -> Tensor:
        """CTC logits from the same linear_enc/linear_out with the prediction path dropped."""
        return self.linear_out(T.tanh(self.linear_enc(h_enc)))


class TransducerHead(Module):
    """One (prediction network, joint network) pair."""

    def __init__(self, n_out: int, n_start: int, d: int, d_p: int, d_j: int, pred_layers: int,
                 rng: np.random.Generator):
        self.prediction = PredictionNetwork(n_out + n_start, d_p, pred_layers, rng)
        self.joint = JointNetwork(d, d_p, d_j, n_out, rng)
        self.n_out = n_out


class HeadBank(Module):
    """SPE: K independent heads over per-language vocabularies. UNI: one merged head."""

    def __init__(self, variant: str, vocab: VocabularySpec, d: int, d_p: int, d_j: int,
                 pred_layers: int, rng: np.random.Generator):
        variant = variant.upper()
        if variant not in ("SPE", "UNI"):
            raise ValueError(f"variant must be SPE or UNI, got {variant!r}")
        self.variant = variant
        self.vocab = vocab
        if variant == "SPE":
            self.heads = [TransducerHead(vocab.output_size(k), 1, d, d_p, d_j, pred_layers, rng)
                          for k in range(vocab.num_languages)]
        else:
            self.heads = [TransducerHead(vocab.output_size(None), vocab.num_languages, d, d_p, d_j,
                                         pred_layers, rng)]

    def spe_select(self, k: int) -> tuple[PredictionNetwork, JointNetwork]:
        if self.variant != "SPE":
            raise ValueError("spe_select requires the SPE variant")
        if not 0 <= k < len(self.heads):
            raise IndexError(f"target language {k} out of range [0, {len(self.heads)})")
        head = self.heads[k]
        return head.prediction, head.joint

    def uni_start_token(self, k: int) -> int:
        if self.variant != "UNI":
            raise ValueError("uni_start_token requires the UNI variant")
        if not 0 <= k < self.vocab.num_languages:
            raise IndexError(f"target language {k} out of range")
        return self.vocab.lid_token_ids[k]

    def head_for(self, k: int) -> TransducerHead:
        if not 0 <= k < self.vocab.num_languages:
            raise IndexError(f"target language {k} out of range [0, {self.vocab.num_languages})")
        return self.heads[k] if self.variant == "SPE" else self.heads[0]

    def start_token(self, k: int) -> int:
        if self.variant == "SPE":
            return self.vocab.output_size(k)  # the head's single SOS id
        return self.uni_start_token(k)

    def vocab_key(self, k: int) -> int | None:
        """Which token list the head for target k emits."""
        return k if self.variant == "SPE" else None

    def encode_labels(self, tokens: list[str], k: int) -> list[int]:
        return self.vocab.encode(tokens, self.vocab_key(k))

    def decode_ids(self, ids: list[int], k: int) -> list[str]:
        return self.vocab.decode(ids, self.vocab_key(k))
