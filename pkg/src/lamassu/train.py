"""Training: two-phase gate schedule, Adam with warmup, deterministic batches."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import Corpus, ToyLanguageSpec
from .encoder import gate_vector
from .heads import VocabularySpec, merge_vocabularies
from .model import LamassuModel, make_batch

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class GateSchedule:
    """Phase 1 (one-hot source gates) before the boundary step, all-ones from it on."""

    total_steps: int
    all_ones_fraction: float

    def __post_init__(self):
        if not 0.0 < self.all_ones_fraction <= 1.0:
            raise ValueError("all_ones_fraction must lie in (0, 1]")

    @property
    def boundary(self) -> int:
        return math.floor((1.0 - self.all_ones_fraction) * self.total_steps + 1e-9)

    def phase(self, step: int) -> int:
        return 1 if step < self.boundary else 2

    def gates(self, step: int, clusters, num_clusters: int) -> np.ndarray:
        all_ones = self.phase(step) == 2
        return np.stack([gate_vector(int(j), num_clusters, all_ones) for j in clusters])


class Adam:
    def __init__(self, params: list[tuple[str, object]], lr: float, beta1: float, beta2: float, eps: float,
                 warmup: int):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps, self.warmup = lr, beta1, beta2, eps, warmup
        self.m = {n: np.zeros_like(p.data) for n, p in params}
        self.v = {n: np.zeros_like(p.data) for n, p in params}
        self.t = 0

    def rate(self, step: int) -> float:
        s = step + 1
        return self.lr * min(s / self.warmup, math.sqrt(self.warmup / s)) if self.warmup else self.lr

    def step(self, clip_norm: float | None = None) -> float:
        grads = {n: (p.grad if p.grad is not None else np.zeros_like(p.data)) for n, p in self.params}
        norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
        factor = min(1.0, clip_norm / (norm + 1e-12)) if clip_norm else 1.0
        lr = self.rate(self.t)
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for n, p in self.params:
            g = grads[n] * np.float32(factor)
            m, v = self.m[n], self.v[n]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= (lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(np.float32)
            p.grad = None
        return norm


def batch_indices(step: int, n: int, batch: int, seed: int, stream: int = 0) -> np.ndarray:
    """Indices for one batch: consecutive slices of seeded per-epoch permutations."""
    start = step * batch
    out = []
    while len(out) < batch:
        epoch, pos = divmod(start + len(out), n)
        perm = np.random.default_rng([seed, 3, stream, epoch]).permutation(n)
        take = min(batch - len(out), n - pos)
        out.extend(perm[pos: pos + take].tolist())
    return np.array(out)


def cluster_map(num_sources: int, clusters: int):
    if clusters == 1:
        return lambda j: 0
    return lambda j: j % clusters


@dataclass
class TrainState:
    step: int = 0
    running: dict = field(default_factory=dict)
    counters: dict = field(default_factory=dict)

    def update(self, name: str, value: float, decay: float = 0.98) -> None:
        prev = self.running.get(name)
        self.running[name] = value if prev is None else decay * prev + (1 - decay) * value


class Trainer:
    def __init__(self, cfg: RunConfig, vocab: VocabularySpec, d_x: int):
        self.cfg = cfg
        self.vocab = vocab
        self.model = LamassuModel(cfg.model, vocab, d_x, seed=cfg.optim.seed)
        o = cfg.optim
        self.opt = Adam(self.model.named_parameters(), o.lr, o.beta1, o.beta2, o.eps, o.warmup)
        self.schedule = GateSchedule(cfg.schedule.total_steps, cfg.schedule.all_ones_fraction)
        self.state = TrainState()

    # -- batches -------------------------------------------------------------
    def _batch_utts(self, corpus: Corpus, step: int):
        o = self.cfg.optim
        if self.model.heads.variant == "SPE":
            k = step % self.model.num_targets
            pool = [u for u in corpus.utterances if u.k == k]
            idx = batch_indices(step // self.model.num_targets, len(pool), o.batch, o.seed, stream=1 + k)
            return [pool[i] for i in idx]
        idx = batch_indices(step, len(corpus), o.batch, o.seed)
        return [corpus.utterances[i] for i in idx]

    def train_step(self, corpus: Corpus, step: int) -> dict:
        cfg = self.cfg
        utts = self._batch_utts(corpus, step)
        cmap = cluster_map(len(ToyLanguageSpec.build().sources), cfg.model.clusters)
        batch = make_batch(utts, cmap)
        phase = self.schedule.phase(step) if cfg.model.clusters > 1 else 2
        gates = self.schedule.gates(step, batch.j, cfg.model.clusters)
        use_lid = phase == 1 or cfg.loss.lid_in_phase2
        counter = Counter()
        self.model.train_mode(True, np.random.default_rng([cfg.optim.seed, 2, step]))
        try:
            out = self.model.losses(batch, gates, cfg.loss, use_lid=use_lid, counter=counter)
        except FloatingPointError as err:
            raise TrainingDiverged(f"non-finite values at step {step}: {err}") from err
        finally:
            self.model.train_mode(False)
        total = out["total"]
        value = total.item()
        if not math.isfinite(value):
            raise TrainingDiverged(f"loss became {value} at step {step}")
        total.backward()
        norm = self.opt.step(cfg.optim.clip_norm)
        rec = {"step": step, "phase": phase, "lr": self.opt.rate(step), "loss": value,
               "transducer": out["transducer"].item(),
               "lid": out["lid"].item() if out["lid"] is not None else 0.0,
               "ctc": out["ctc"].item() if out["ctc"] is not None else 0.0,
               "grad_norm": norm}
        for key in ("loss", "transducer", "lid", "ctc"):
            self.state.update(key, rec[key])
        for key, n in counter.items():
            self.state.counters[key] = self.state.counters.get(key, 0) + n
        self.state.step = step + 1
        return rec

    def fit(self, corpus: Corpus, until: int | None = None, log_fn=None, checkpoint_path=None,
            checkpoint_every: int = 0, log_every: int | None = None) -> TrainState:
        end = self.cfg.schedule.total_steps if until is None else min(until, self.cfg.schedule.total_steps)
        every = log_every or self.cfg.optim.log_every
        for step in range(self.state.step, end):
            rec = self.train_step(corpus, step)
            if log_fn is not None and (step % every == 0 or step == end - 1):
                log_fn(rec)
            if checkpoint_path and checkpoint_every and (step + 1) % checkpoint_every == 0:
                self.save(checkpoint_path)
        return self.state

    # -- persistence ---------------------------------------------------------
    def save(self, path) -> None:
        arrays = {name: p.data for name, p in self.model.named_parameters()}
        for name, _ in self.model.named_parameters():
            arrays[f"optim.m.{name}"] = self.opt.m[name]
            arrays[f"optim.v.{name}"] = self.opt.v[name]
        meta = {
            "config": self.cfg.to_dict(),
            "vocab": self.vocab.to_dict(),
            "d_x": self.model.d_x,
            "train_state": {"step": self.state.step, "optim_t": self.opt.t, "running": self.state.running,
                            "counters": self.state.counters, "rng": {"seed": self.cfg.optim.seed}},
        }
        save_checkpoint(path, arrays, meta)

    @classmethod
    def load(cls, path) -> "Trainer":
        arrays, meta = load_checkpoint(path)
        cfg = RunConfig.from_dict(meta["config"])
        trainer = cls(cfg, merge_vocabularies(meta["vocab"]["per_language"]), int(meta["d_x"]))
        for name, p in trainer.model.named_parameters():
            p.data[...] = arrays[name]
            trainer.opt.m[name][...] = arrays[f"optim.m.{name}"]
            trainer.opt.v[name][...] = arrays[f"optim.v.{name}"]
        st = meta["train_state"]
        trainer.state = TrainState(int(st["step"]), dict(st["running"]), dict(st.get("counters", {})))
        trainer.opt.t = int(st["optim_t"])
        return trainer


def load_model(path) -> LamassuModel:
    return Trainer.load(path).model


def train(cfg: RunConfig, corpus: Corpus, vocab: VocabularySpec | None = None, log_fn=None) -> Trainer:
    vocab = vocab or merge_vocabularies(ToyLanguageSpec.build(overlap=cfg.data.overlap).targets)
    if cfg.model.clusters == 1 and cfg.loss.alpha != 0:
        log.info("alpha coerced to 0 (single cluster, no LID loss)")
    trainer = Trainer(cfg, vocab, corpus.features.d_x)
    trainer.fit(corpus, log_fn=log_fn)
    return trainer
