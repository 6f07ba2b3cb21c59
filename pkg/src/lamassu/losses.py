"""Transducer, CTC and LID losses and the combined training objective.

Transducer paths follow the Graves convention: from lattice node (t, u) a
blank moves to (t+1, u) and a label moves to (t, u+1); every path ends with
the blank emitted at (T-1, U). Both DP losses run in float64 and return
per-utterance negative log-likelihoods averaged over the batch. Their
gradients come from forward-backward occupancies, not from unrolling the DP
through the autodiff graph.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

log = logging.getLogger(__name__)

NEG = -1e30  # finite stand-in for log(0) where cumulative sums must stay finite


def _log_softmax64(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _as_batch_labels(labels, label_lengths=None):
    if label_lengths is None:
        seqs = [list(map(int, labels))]
    else:
        # padded array or ragged list of sequences
        seqs = [[int(x) for x in labels[b][: int(n)]] for b, n in enumerate(label_lengths)]
    return seqs


def _pad(seqs, fill=0) -> np.ndarray:
    width = max([len(s) for s in seqs] + [1])
    out = np.full((len(seqs), width), fill, dtype=np.int64)
    for b, s in enumerate(seqs):
        out[b, : len(s)] = s
    return out


def transducer_lattice(logp: np.ndarray, labels: np.ndarray, t_len: np.ndarray, u_len: np.ndarray,
                       blank: int):
    """Forward/backward log-lattices for a padded batch.

    ``logp`` is [B, T, U+1, V] log-probabilities. Returns (alpha, beta, logz,
    blank_lp, label_lp); beta has one extra row and column of padding.
    """
    b_sz, t_max, u1, _ = logp.shape
    t_idx = np.arange(t_max)[None, :, None]
    u_idx = np.arange(u1)[None, None, :]
    t_valid = t_idx < t_len[:, None, None]

    blank_lp = logp[..., blank].copy()
    label_lp = np.full((b_sz, t_max, u1), -np.inf)
    if u1 > 1:
        gathered = np.take_along_axis(logp[:, :, :-1, :], labels[:, None, : u1 - 1, None], axis=3)[..., 0]
        label_lp[:, :, :-1] = gathered
    label_lp = np.where(t_valid & (u_idx < u_len[:, None, None]), label_lp, -np.inf)
    # past the last frame, only the final row may keep "advancing" for free
    at_final_row = u_idx == u_len[:, None, None]
    blank_lp = np.where(t_valid, blank_lp, np.where(at_final_row, 0.0, NEG))

    alpha = np.empty((b_sz, t_max, u1))
    excl = np.concatenate([np.zeros((b_sz, 1, u1)), np.cumsum(blank_lp, axis=1)[:, :-1, :]], axis=1)
    alpha[:, :, 0] = excl[:, :, 0]
    with np.errstate(invalid="ignore"):
        for u in range(1, u1):
            emit = alpha[:, :, u - 1] + label_lp[:, :, u - 1]
            alpha[:, :, u] = excl[:, :, u] + np.logaddexp.accumulate(emit - excl[:, :, u], axis=1)

    beta = np.full((b_sz, t_max + 1, u1 + 1), -np.inf)
    beta[np.arange(b_sz), t_max, u_len] = 0.0
    incl = np.concatenate([np.zeros((b_sz, 1, u1)), np.cumsum(blank_lp, axis=1)], axis=1)  # S(t), t<=T
    with np.errstate(invalid="ignore"):
        for u in range(u1 - 1, -1, -1):
            c = np.empty((b_sz, t_max + 1))
            c[:, :t_max] = label_lp[:, :, u] + beta[:, :t_max, u + 1]
            c[:, t_max] = beta[:, t_max, u]
            s = incl[:, :, u]
            acc = np.logaddexp.accumulate((s + c)[:, ::-1], axis=1)[:, ::-1]
            beta[:, :, u] = acc - s
    logz = beta[:, 0, 0]
    return alpha, beta, logz, blank_lp, label_lp


def transducer_loss(logits: Tensor, labels, frame_lengths=None, label_lengths=None,
                    blank: int = 0) -> Tensor:
    """Mean negative log-likelihood of the label sequences under the lattice logits.

    Accepts one utterance (logits [T, U+1, V], labels of length U) or a padded
    batch (logits [B, T, U+1, V] with per-utterance lengths).
    """
    single = logits.ndim == 3
    z = logits.data[None] if single else logits.data
    b_sz, t_max, u1, v = z.shape
    seqs = _as_batch_labels(labels, None if single else label_lengths)
    u_len = np.array([len(s) for s in seqs], dtype=np.int64)
    t_len = np.full(b_sz, t_max, dtype=np.int64) if frame_lengths is None else np.asarray(frame_lengths, np.int64)
    if np.any(t_len < 1):
        raise ValueError("transducer loss needs at least one frame")
    if np.any(u_len + 1 > u1):
        raise ValueError("lattice has fewer label positions than the labels need")
    flat = [x for s in seqs for x in s]
    if flat and (min(flat) < 0 or max(flat) >= v or blank in flat):
        raise ValueError("label id out of range or equal to blank")
    lab = _pad(seqs)
    if lab.shape[1] < u1 - 1:
        lab = np.pad(lab, ((0, 0), (0, u1 - 1 - lab.shape[1])))

    logp = _log_softmax64(z)
    alpha, beta, logz, blank_lp, label_lp = transducer_lattice(logp, lab, t_len, u_len, blank)
    if not np.all(np.isfinite(logz)):
        raise FloatingPointError("transducer lattice has no valid path")
    loss = float(-logz.mean())

    def back(g):
        t_idx = np.arange(t_max)[None, :, None]
        u_idx = np.arange(u1)[None, None, :]
        valid = (t_idx < t_len[:, None, None]) & (u_idx <= u_len[:, None, None])
        with np.errstate(invalid="ignore", over="ignore"):
            occ_blank = np.exp(alpha + blank_lp + beta[:, 1:, :u1] - logz[:, None, None])
            occ_label = np.exp(alpha + label_lp + beta[:, :t_max, 1:] - logz[:, None, None])
        occ_blank = np.where(valid, occ_blank, 0.0)
        occ_label = np.where(valid & (u_idx < u_len[:, None, None]), occ_label, 0.0)
        grad = np.exp(logp) * (occ_blank + occ_label)[..., None]
        grad[..., blank] -= occ_blank
        lab_full = np.zeros((b_sz, u1), dtype=np.int64)
        lab_full[:, : u1 - 1] = lab[:, : u1 - 1]
        bi, ti, ui = np.indices((b_sz, t_max, u1))
        np.subtract.at(grad, (bi, ti, ui, np.broadcast_to(lab_full[:, None, :], (b_sz, t_max, u1))), occ_label)
        grad *= float(g) / b_sz
        grad = grad.astype(logits.data.dtype)
        return (grad[0] if single else grad,)

    return T.custom_op(np.asarray(loss, dtype=np.float64), (logits,), back, "transducer_loss")


def ctc_feasible(labels: list[int], num_frames: int) -> bool:
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return num_frames >= len(labels) + repeats


def ctc_loss(logits: Tensor, labels, frame_lengths=None, label_lengths=None, blank: int = 0,
             counter: Counter | None = None) -> Tensor:
    """Mean CTC negative log-likelihood over utterances whose frames suffice.

    Too-short utterances are dropped from the mean and counted under
    ``counter["ctc_skipped"]``.
    """
    single = logits.ndim == 2
    z = logits.data[None] if single else logits.data
    b_sz, t_max, v = z.shape
    seqs = _as_batch_labels(labels, None if single else label_lengths)
    t_len = np.full(b_sz, t_max, dtype=np.int64) if frame_lengths is None else np.asarray(frame_lengths, np.int64)
    flat = [x for s in seqs for x in s]
    if flat and (min(flat) < 0 or max(flat) >= v or blank in flat):
        raise ValueError("label id out of range or equal to blank")
    keep = np.array([ctc_feasible(s, int(n)) for s, n in zip(seqs, t_len)])
    n_skip = int((~keep).sum())
    if n_skip:
        if counter is not None:
            counter["ctc_skipped"] += n_skip
        log.warning("ctc: skipped %d utterance(s) with too few frames", n_skip)
        if single:
            raise ValueError("CTC: too few frames for the label sequence")
    if not keep.any():
        return Tensor(np.asarray(0.0, dtype=np.float64), dtype=None)

    logp = _log_softmax64(z)
    s_len = np.array([2 * len(s) + 1 for s in seqs])
    s_max = int(s_len.max())
    ext = np.full((b_sz, s_max), blank, dtype=np.int64)
    for b, s in enumerate(seqs):
        ext[b, 1: 2 * len(s): 2] = s
    s_idx = np.arange(s_max)[None, :]
    in_range = s_idx < s_len[:, None]
    skip_ok = np.zeros((b_sz, s_max), dtype=bool)
    skip_ok[:, 2:] = (ext[:, 2:] != blank) & (ext[:, 2:] != ext[:, :-2])
    emit = np.take_along_axis(logp, np.broadcast_to(ext[:, None, :], (b_sz, t_max, s_max)), axis=2)
    emit = np.where(in_range[:, None, :], emit, -np.inf)

    def shift(a, n):
        out = np.full_like(a, -np.inf)
        out[:, n:] = a[:, :-n]
        return out

    alpha = np.full((b_sz, t_max, s_max), -np.inf)
    alpha[:, 0, :2] = emit[:, 0, :2]
    for t in range(1, t_max):
        prev = alpha[:, t - 1]
        acc = np.logaddexp(prev, shift(prev, 1))
        acc = np.where(skip_ok, np.logaddexp(acc, shift(prev, 2)), acc)
        alpha[:, t] = acc + emit[:, t]
    bidx = np.arange(b_sz)
    last = t_len - 1
    end1 = alpha[bidx, last, s_len - 1]
    end2 = np.where(s_len >= 2, alpha[bidx, last, np.maximum(s_len - 2, 0)], -np.inf)
    logz = np.logaddexp(end1, end2)

    beta = np.full((b_sz, t_max, s_max), -np.inf)
    init = np.full((b_sz, s_max), -np.inf)
    init[bidx, s_len - 1] = 0.0
    init[bidx, np.maximum(s_len - 2, 0)] = 0.0
    skip_next = np.zeros((b_sz, s_max), dtype=bool)
    skip_next[:, :-2] = skip_ok[:, 2:]

    def unshift(a, n):
        out = np.full_like(a, -np.inf)
        out[:, :-n] = a[:, n:]
        return out

    for t in range(t_max - 1, -1, -1):
        if t + 1 < t_max:
            nxt = beta[:, t + 1]
            acc = np.logaddexp(nxt, unshift(nxt, 1))
            acc = np.where(skip_next, np.logaddexp(acc, unshift(nxt, 2)), acc)
        else:
            acc = np.full((b_sz, s_max), -np.inf)
        acc = np.where((t == last)[:, None], init, np.where((t < last)[:, None], acc, -np.inf))
        beta[:, t] = acc + emit[:, t]

    n_keep = int(keep.sum())
    loss = float(-(logz[keep]).sum() / n_keep)

    def back(g):
        with np.errstate(invalid="ignore", over="ignore"):
            occ = np.exp(alpha + beta - emit - logz[:, None, None])
        t_valid = (np.arange(t_max)[None, :] < t_len[:, None]) & keep[:, None]
        occ = np.where(t_valid[:, :, None] & np.isfinite(occ), occ, 0.0)
        grad = np.exp(logp) * t_valid[:, :, None]
        bi, ti, si = np.indices((b_sz, t_max, s_max))
        np.subtract.at(grad, (bi, ti, np.broadcast_to(ext[:, None, :], (b_sz, t_max, s_max))), occ)
        grad *= float(g) / n_keep
        grad = grad.astype(logits.data.dtype)
        return (grad[0] if single else grad,)

    return T.custom_op(np.asarray(loss, dtype=np.float64), (logits,), back, "ctc_loss")


def lid_loss(lid_logit_sums: Tensor, j) -> Tensor:
    """Cross-entropy of the summed weight-estimation logits against the source cluster."""
    if lid_logit_sums.shape[-1] < 2:
        raise ValueError("LID loss needs at least two clusters")
    return T.cross_entropy(lid_logit_sums, j)


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.75
    beta: float = 0.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be nonnegative")

    @classmethod
    def resolve(cls, clusters: int, ctc: bool, alpha: float = 0.75, beta: float = 0.4) -> "LossWeights":
        if clusters <= 1 and alpha != 0:
            log.info("alpha coerced to 0 (single cluster, no LID loss)")
            alpha = 0.0
        return cls(alpha, beta if ctc else 0.0)


def combined_loss(l_t, l_lid, l_ctc, weights: LossWeights, clusters: int | None = None):
    """Transducer loss plus weighted LID and CTC terms. Works on Tensors or floats."""
    alpha, beta = weights.alpha, weights.beta
    if clusters is not None and clusters <= 1 and alpha != 0:
        log.info("alpha coerced to 0 (single cluster, no LID loss)")
        alpha = 0.0
    total = l_t
    if l_lid is not None and alpha:
        total = total + (T.scale(l_lid, alpha) if isinstance(l_lid, Tensor) else alpha * l_lid)
    if l_ctc is not None and beta:
        total = total + (T.scale(l_ctc, beta) if isinstance(l_ctc, Tensor) else beta * l_ctc)
    return total
