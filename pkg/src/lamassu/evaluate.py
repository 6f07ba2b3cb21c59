"""Corpus evaluation and the line-delimited report format.

Report file: one JSON object per line with exactly the keys ``direction``,
``metric`` and ``value``. Directions are ``s<j>-t<k>`` plus the averages
``avg-identity`` (target 0, order-preserving), ``avg-transformed`` (targets 1
and 2) and ``avg-all``. Metrics: ``ter``, ``bleu``, ``ap``, ``al_ms``,
``dal_ms``, ``al_frames``, ``dal_frames``, ``leakage`` (share of emitted
tokens outside the target language) and ``lid_acc`` (clustered encoders).

Utterances are grouped by the source language of their reference
transcript; the source-cluster field of the corpus is never read.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import Corpus, ToyLanguageSpec, direction_name, source_language_of
from .decode import greedy_decode_streaming
from .metrics import bleu, corpus_token_error_rate, trace_latency

METRIC_ORDER = ("ter", "bleu", "ap", "al_frames", "al_ms", "dal_frames", "dal_ms", "leakage", "lid_acc")
ROUND = 6


@dataclass
class Report:
    records: list[dict] = field(default_factory=list)

    def add(self, direction: str, metric: str, value: float) -> None:
        self.records.append({"direction": direction, "metric": metric, "value": round(float(value), ROUND)})

    def get(self, direction: str, metric: str) -> float:
        for r in self.records:
            if r["direction"] == direction and r["metric"] == metric:
                return r["value"]
        raise KeyError((direction, metric))

    def directions(self) -> list[str]:
        seen = []
        for r in self.records:
            if r["direction"] not in seen:
                seen.append(r["direction"])
        return seen

    def to_text(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def write(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def parse(cls, text: str) -> "Report":
        recs = []
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if set(rec) != {"direction", "metric", "value"}:
                raise ValueError(f"bad report record: {line!r}")
            recs.append(rec)
        return cls(recs)

    @classmethod
    def read(cls, path) -> "Report":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    def table(self) -> str:
        metrics = [m for m in METRIC_ORDER if any(r["metric"] == m for r in self.records)]
        lines = ["direction".ljust(16) + "".join(m.rjust(11) for m in metrics)]
        for d in self.directions():
            row = d.ljust(16)
            for m in metrics:
                try:
                    row += f"{self.get(d, m):11.2f}"
                except KeyError:
                    row += "-".rjust(11)
            lines.append(row)
        return "\n".join(lines)


def lid_predictions(model, corpus: Corpus, batch: int = 64) -> np.ndarray:
    """Argmax of the summed weight-estimation logits under all-ones gates."""
    preds = []
    utts = corpus.utterances
    with T.no_grad():
        for s in range(0, len(utts), batch):
            chunk = utts[s: s + batch]
            n = max(u.num_frames for u in chunk)
            feats = np.zeros((len(chunk), n, chunk[0].features.shape[1]), np.float32)
            for b, u in enumerate(chunk):
                feats[b, : u.num_frames] = u.features
            lengths = np.array([u.num_frames for u in chunk])
            ks = np.array([u.k for u in chunk])
            gates = np.ones((len(chunk), model.encoder.clusters), np.float32)
            out = model.encode(feats, ks, gates, lengths)
            preds.extend(np.argmax(out.lid_logit_sums.data, axis=1).tolist())
    return np.array(preds)


def decode_corpus(model, corpus: Corpus, ks=None, restrict_to_target: bool = False, max_symbols: int = 10):
    results = []
    for u in corpus.utterances:
        if ks is not None and u.k not in ks:
            continue
        results.append((u, greedy_decode_streaming(model, u.features, u.k, max_symbols_per_frame=max_symbols,
                                                   restrict_to_target=restrict_to_target)))
    return results


def evaluate(model, corpus: Corpus, ks=None, spec: ToyLanguageSpec | None = None,
             restrict_to_target: bool = False) -> Report:
    spec = spec or ToyLanguageSpec.build()
    frame_ms = model.cfg.frame_ms
    decoded = decode_corpus(model, corpus, ks, restrict_to_target)
    groups: dict[tuple[int, int], list] = defaultdict(list)
    for u, res in decoded:
        groups[(source_language_of(u.source, spec), u.k)].append((u, res))

    lid_pred = None
    if model.encoder.clusters > 1:
        subset = Corpus(corpus.seed, corpus.split, corpus.features, [u for u, _ in decoded])
        lid_pred = dict(zip((u.uid for u, _ in decoded), lid_predictions(model, subset)))

    report = Report()
    per_dir: dict[str, dict[str, float]] = {}
    for (j, k) in sorted(groups):
        items = groups[(j, k)]
        hyps = [res.tokens for _, res in items]
        refs = [u.labels for u, _ in items]
        m = {"ter": corpus_token_error_rate(hyps, refs), "bleu": bleu(hyps, refs)}
        lats = [trace_latency(res.trace) for _, res in items if len(res.trace)]
        if lats:
            m["ap"] = float(np.mean([x.ap for x in lats]))
            m["al_frames"] = float(np.mean([x.al for x in lats]))
            m["al_ms"] = m["al_frames"] * frame_ms
            m["dal_frames"] = float(np.mean([x.dal for x in lats]))
            m["dal_ms"] = m["dal_frames"] * frame_ms
        target_set = set(spec.targets[k])
        emitted = [t for h in hyps for t in h]
        m["leakage"] = 100.0 * sum(t not in target_set for t in emitted) / len(emitted) if emitted else 0.0
        if lid_pred is not None:
            cluster = j % model.encoder.clusters
            m["lid_acc"] = 100.0 * float(np.mean([lid_pred[u.uid] == cluster for u, _ in items]))
        name = direction_name(j, k)
        per_dir[name] = m
        for metric in METRIC_ORDER:
            if metric in m:
                report.add(name, metric, m[metric])

    def average(name, members):
        for metric in METRIC_ORDER:
            vals = [per_dir[d][metric] for d in members if metric in per_dir[d]]
            if vals:
                report.add(name, metric, float(np.mean(vals)))

    identity = [direction_name(j, k) for (j, k) in sorted(groups) if spec.transforms[k] == "identity"]
    transformed = [direction_name(j, k) for (j, k) in sorted(groups) if spec.transforms[k] != "identity"]
    if identity:
        average("avg-identity", identity)
    if transformed:
        average("avg-transformed", transformed)
    average("avg-all", list(per_dir))
    return report
