"""Token error rate, corpus BLEU and streaming latency (AP / AL / DAL)."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass


def edit_distance(hyp, ref) -> int:
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, 1):
        cur = [i] + [0] * len(ref)
        for j, r in enumerate(ref, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (h != r))
        prev = cur
    return prev[-1]


def token_error_rate(hyp, ref) -> float:
    if len(ref) == 0:
        raise ValueError("reference must be nonempty")
    return 100.0 * edit_distance(hyp, ref) / len(ref)


def corpus_token_error_rate(hyps, refs) -> float:
    """Total edits over total reference tokens, as a percentage."""
    total = sum(len(r) for r in refs)
    if total == 0:
        raise ValueError("references must be nonempty")
    return 100.0 * sum(edit_distance(h, r) for h, r in zip(hyps, refs)) / total


def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


def bleu(hyps, refs, max_order: int = 4) -> float:
    """Corpus BLEU with uniform weights and a brevity penalty.

    Orders above 1 with no matches are add-one smoothed; unigram precision is
    never smoothed, so a corpus with no unigram overlap scores 0.
    """
    if len(hyps) != len(refs):
        raise ValueError("hypothesis and reference counts differ")
    if not refs:
        raise ValueError("empty corpus")
    matches = [0] * max_order
    totals = [0] * max_order
    hyp_len = ref_len = 0
    for h, r in zip(hyps, refs):
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_order + 1):
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    if hyp_len == 0 or matches[0] == 0:
        return 0.0
    log_p = 0.0
    for n in range(max_order):
        if matches[n] > 0:
            log_p += math.log(matches[n] / totals[n])
        else:
            log_p += math.log(1.0 / (totals[n] + 1))
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p / max_order)


@dataclass
class Latency:
    ap: float
    al: float
    dal: float


def latency_metrics(delays, source_len: int) -> Latency:
    """AP, AL and DAL (in source frames) from per-token consumed-frame counts.

    ``delays[i]`` is the number of source frames read when target token i was
    written; the target length is the hypothesis length.
    """
    delays = [float(d) for d in delays]
    if not delays:
        raise ValueError("latency needs at least one emitted token")
    if source_len <= 0:
        raise ValueError("source length must be positive")
    tgt_len = len(delays)
    ap = sum(delays) / (source_len * tgt_len)
    rate = source_len / tgt_len  # frames per target token, 1/gamma
    al = 0.0
    tau = 0
    for i, d in enumerate(delays):
        al += d - i * rate
        tau = i + 1
        if d >= source_len:
            break
    al /= tau
    dal = 0.0
    prev = None
    for i, d in enumerate(delays):
        g = d if prev is None else max(d, prev + rate)
        dal += g - i * rate
        prev = g
    dal /= tgt_len
    return Latency(ap, al, dal)


def trace_latency(trace, frame_ms: float | None = None) -> Latency:
    lat = latency_metrics(trace.frames, trace.total_frames)
    if frame_ms is None:
        return lat
    return Latency(lat.ap, lat.al * frame_ms, lat.dal * frame_ms)
