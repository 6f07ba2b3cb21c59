"""The full transducer: clustered encoder plus an SPE or UNI head bank."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import LossConfig, ModelConfig
from .encoder import ClusteredEncoder, EncoderOutput, augment_target_lid, pair_frames
from .heads import BLANK, HeadBank, VocabularySpec
from .losses import LossWeights, combined_loss, ctc_loss, lid_loss, transducer_loss
from .nn import DropoutState, Module


@dataclass
class Batch:
    feats: np.ndarray          # [B, T, d_x], zero padded
    frame_lengths: np.ndarray  # [B]
    j: np.ndarray              # [B] source cluster (training only)
    k: np.ndarray              # [B] target language
    labels: list[list[str]]

    def __len__(self) -> int:
        return len(self.labels)


def make_batch(utts, cluster_of=None) -> Batch:
    """Pad a list of utterances. ``cluster_of`` maps a source language to its cluster."""
    n = max(u.features.shape[0] for u in utts)
    d_x = utts[0].features.shape[1]
    feats = np.zeros((len(utts), n, d_x), dtype=np.float32)
    for b, u in enumerate(utts):
        feats[b, : u.features.shape[0]] = u.features
    lengths = np.array([u.features.shape[0] for u in utts], dtype=np.int64)
    js = np.array([-1 if u.j is None else (cluster_of(u.j) if cluster_of else u.j) for u in utts])
    ks = np.array([u.k for u in utts], dtype=np.int64)
    return Batch(feats, lengths, js, ks, [list(u.labels) for u in utts])


class LamassuModel(Module):
    def __init__(self, cfg: ModelConfig, vocab: VocabularySpec, d_x: int, seed: int = 0):
        cfg.validate()
        rng = np.random.default_rng([seed, 1])
        self.cfg = cfg
        self.vocab = vocab
        self.d_x = d_x
        self.num_targets = vocab.num_languages
        d_in = d_x + (self.num_targets if cfg.target_lid_for_encoder else 0)
        if cfg.subsample:
            d_in *= 2
        self.drop = DropoutState(cfg.dropout)
        self.encoder = ClusteredEncoder(d_in, cfg.d, cfg.heads, cfg.blocks, cfg.clusters, cfg.separate_layers,
                                        cfg.shared_layers, cfg.chunk_frames, rng, self.drop)
        self.heads = HeadBank(cfg.variant, vocab, cfg.d, cfg.d_p, cfg.d_j, cfg.pred_layers, rng)

    # -- input side ------------------------------------------------------------
    @property
    def frame_stride(self) -> int:
        return 2 if self.cfg.subsample else 1

    def prepare(self, feats: np.ndarray, k) -> np.ndarray:
        """Target-LID augmentation then optional frame pairing; feats [..., T, d_x]."""
        if self.cfg.target_lid_for_encoder:
            ks = np.atleast_1d(np.asarray(k))
            if feats.ndim == 3 and ks.size > 1:
                feats = np.stack([augment_target_lid(f, int(kk), self.num_targets) for f, kk in zip(feats, ks)])
            else:
                feats = augment_target_lid(feats, int(ks[0]), self.num_targets)
        if self.cfg.subsample:
            feats = pair_frames(feats)
        return feats

    def encoder_lengths(self, frame_lengths) -> np.ndarray:
        return (np.asarray(frame_lengths) + self.frame_stride - 1) // self.frame_stride

    def encode(self, feats: np.ndarray, k, gates, frame_lengths=None) -> EncoderOutput:
        x = self.prepare(np.asarray(feats, dtype=np.float32), k)
        lengths = None if frame_lengths is None else self.encoder_lengths(frame_lengths)
        return self.encoder(x, gates, lengths)

    def train_mode(self, flag: bool, rng: np.random.Generator | None = None) -> None:
        self.drop.training = flag
        self.drop.rng = rng

    # -- losses ---------------------------------------------------------------
    def losses(self, batch: Batch, gates: np.ndarray, loss_cfg: LossConfig, use_lid: bool = True,
               counter: Counter | None = None) -> dict:
        """Forward a batch; returns the combined loss Tensor and its components."""
        enc = self.encode(batch.feats, batch.k, gates, batch.frame_lengths)
        b_sz = len(batch)
        groups = ({int(k): np.flatnonzero(batch.k == k) for k in np.unique(batch.k)}
                  if self.heads.variant == "SPE" else {None: np.arange(b_sz)})
        l_t = l_ctc = None
        for k, idx in groups.items():
            sub = idx if len(idx) < b_sz else slice(None)
            h_enc = enc.h_enc if len(idx) == b_sz else T.getitem(enc.h_enc, idx)
            t_len = enc.lengths[sub]
            k_rows = batch.k[sub]
            head = self.heads.head_for(int(k_rows[0]))
            label_ids = [self.heads.encode_labels(batch.labels[i], int(batch.k[i])) for i in np.arange(b_sz)[sub]]
            u_len = np.array([len(s) for s in label_ids])
            u_max = int(u_len.max())
            pred_in = np.full((len(label_ids), u_max + 1), BLANK, dtype=np.int64)
            labels = np.zeros((len(label_ids), max(u_max, 1)), dtype=np.int64)
            for b, (ids, kk) in enumerate(zip(label_ids, k_rows)):
                pred_in[b, 0] = self.heads.start_token(int(kk))
                pred_in[b, 1: len(ids) + 1] = ids
                labels[b, : len(ids)] = ids
            t_max = int(t_len.max())
            if t_max < h_enc.shape[1]:
                h_enc = h_enc[:, :t_max, :]
            h_pred = head.prediction(pred_in)
            logits = head.joint(h_enc, h_pred)
            frac = len(idx) / b_sz
            lt = T.scale(transducer_loss(logits, labels, t_len, u_len), frac)
            l_t = lt if l_t is None else l_t + lt
            if loss_cfg.ctc:
                c = head.joint.ctc_forward(h_enc)
                lc = T.scale(ctc_loss(c, labels, t_len, u_len, counter=counter), frac)
                l_ctc = lc if l_ctc is None else l_ctc + lc
        weights = LossWeights.resolve(self.cfg.clusters, loss_cfg.ctc, loss_cfg.alpha, loss_cfg.beta)
        l_lid = None
        if self.cfg.clusters > 1 and weights.alpha > 0 and use_lid:
            if np.any(batch.j < 0):
                raise ValueError("LID loss needs source clusters for every utterance")
            l_lid = lid_loss(enc.lid_logit_sums, batch.j)
        total = combined_loss(l_t, l_lid, l_ctc, weights)
        return {"total": total, "transducer": l_t, "lid": l_lid, "ctc": l_ctc, "encoder": enc}
