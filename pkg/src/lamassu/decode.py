"""Greedy streaming transducer decoding.

The decoder only ever receives features and a target language; there is no
parameter through which a source-language label could reach it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .heads import BLANK, EOS, N_SPECIAL
from .nn import ChunkMask
from .tensor import Tensor


@dataclass
class EmissionTrace:
    tokens: list[int] = field(default_factory=list)
    frames: list[int] = field(default_factory=list)   # source frames consumed when emitted
    total_frames: int = 0

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class DecodeResult:
    ids: list[int]
    tokens: list[str]
    trace: EmissionTrace


def _allowed_outputs(model, k: int, restrict: bool) -> np.ndarray | None:
    if not restrict or model.heads.variant != "UNI":
        return None
    vocab = model.vocab
    allowed = np.zeros(vocab.output_size(None), dtype=bool)
    allowed[[BLANK, EOS]] = True
    allowed[np.asarray(vocab.remap[k]) + N_SPECIAL] = True
    return allowed


def greedy_decode_streaming(model, features: np.ndarray, k: int, chunk_frames: int | None = None,
                            max_symbols_per_frame: int = 10, offline: bool = False,
                            restrict_to_target: bool = False) -> DecodeResult:
    """Decode one utterance chunk by chunk.

    With ``offline=True`` the encoder runs once over the whole utterance under
    the same chunk mask; emissions are still stamped with the chunk-end frame
    at which they would become available, so both paths produce identical
    traces when the encoder outputs agree.
    """
    enc = model.encoder
    chunk = chunk_frames or enc.chunk_frames
    if chunk != enc.chunk_frames and not offline:
        raise ValueError("streaming decode must use the encoder's chunk size")
    head = model.heads.head_for(k)
    joint, pred = head.joint, head.prediction
    allowed = _allowed_outputs(model, k, restrict_to_target)
    stride = model.frame_stride
    n_input = features.shape[0]

    with T.no_grad():
        x = model.prepare(np.asarray(features, dtype=np.float32), k)
        n_frames = x.shape[0]
        mask = ChunkMask(chunk, n_frames)

        if offline:
            out = enc(x[None], np.ones((1, enc.clusters), np.float32), chunk_frames=chunk)
            h_all = out.h_enc.data[0]
            chunks = [h_all[s: s + chunk] for s in range(0, n_frames, chunk)]
        else:
            stream = enc.stream()
            chunks = (stream.push(x[s: s + chunk]).data for s in range(0, n_frames, chunk))

        state = pred.zero_state(1)
        h_pred, state = pred.step([model.heads.start_token(k)], state)
        p_proj = joint.linear_pred(h_pred).data[0]
        w_out, b_out = joint.linear_out.weight.data, joint.linear_out.bias.data
        trace = EmissionTrace(total_frames=n_input)
        ids: list[int] = []
        done = False
        t = 0
        for h_chunk in chunks:
            e_proj = joint.linear_enc(Tensor(h_chunk)).data
            for row in e_proj:
                available = min(mask.chunk_end(t) * stride, n_input)
                for _ in range(max_symbols_per_frame):
                    logits = np.tanh(row + p_proj) @ w_out.T + b_out
                    if allowed is not None:
                        logits = np.where(allowed, logits, -np.inf)
                    y = int(np.argmax(logits))
                    if y == BLANK:
                        break
                    if y == EOS:
                        done = True
                        break
                    ids.append(y)
                    trace.tokens.append(y)
                    trace.frames.append(available)
                    h_pred, state = pred.step([y], state)
                    p_proj = joint.linear_pred(h_pred).data[0]
                t += 1
                if done:
                    break
            if done:
                break
    tokens = model.heads.decode_ids(ids, k)
    return DecodeResult(ids, tokens, trace)
