"""Independent reference computations used by tests and ``lamassu verify``.

Nothing here shares code with the paths it checks: alignments are
enumerated explicitly, gradients are estimated by central differences, and
the clustered block is re-evaluated as straight-line numpy.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable

import numpy as np


def _logsumexp(xs: list[float]) -> float:
    xs = [x for x in xs if x != -math.inf]
    if not xs:
        return -math.inf
    m = max(xs)
    return m + math.log(sum(math.exp(x - m) for x in xs))


def _log_softmax_rows(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def transducer_alignments(num_frames: int, num_labels: int):
    """Yield every move string over {'b', 'l'}: T blanks and U labels, ending in a blank."""
    for label_slots in itertools.combinations(range(num_frames - 1 + num_labels), num_labels):
        moves = ["b"] * (num_frames - 1 + num_labels)
        for i in label_slots:
            moves[i] = "l"
        yield moves + ["b"]


def transducer_logprob_enum(logits: np.ndarray, labels: list[int], blank: int = 0) -> float:
    """log P(labels) summed over explicitly enumerated lattice paths; logits [T, U+1, V]."""
    logp = _log_softmax_rows(logits)
    n_t, n_u = logp.shape[0], len(labels)
    totals = []
    for moves in transducer_alignments(n_t, n_u):
        t = u = 0
        s = 0.0
        for m in moves:
            if m == "b":
                s += logp[t, u, blank]
                t += 1
            else:
                s += logp[t, u, labels[u]]
                u += 1
        totals.append(s)
    return _logsumexp(totals)


def ctc_collapse(path, blank: int = 0) -> list[int]:
    out = []
    prev = None
    for s in path:
        if s != prev and s != blank:
            out.append(s)
        prev = s
    return out


def ctc_logprob_enum(logits: np.ndarray, labels: list[int], blank: int = 0) -> float:
    """log P(labels) over every frame-level path that collapses to the labels; logits [T, V]."""
    logp = _log_softmax_rows(logits)
    symbols = sorted(set(labels) | {blank})
    totals = []
    for path in itertools.product(symbols, repeat=logp.shape[0]):
        if ctc_collapse(path, blank) == list(labels):
            totals.append(sum(logp[t, s] for t, s in enumerate(path)))
    return _logsumexp(totals)


def finite_difference_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-3,
                           indices=None) -> np.ndarray:
    """Central differences of scalar f() w.r.t. array x, perturbed in place.

    ``f`` may also return a (value, signature) pair; entries whose +h and -h
    signatures differ come back as NaN (the step crossed a kink).
    """
    grad = np.zeros(x.shape, dtype=np.float64)
    idxs = list(np.ndindex(x.shape)) if indices is None else indices
    for idx in idxs:
        orig = x[idx]
        x[idx] = orig + h
        xp = float(x[idx])
        fp = f()
        x[idx] = orig - h
        xm = float(x[idx])
        fm = f()
        x[idx] = orig
        if isinstance(fp, tuple):
            (fp, sig_p), (fm, sig_m) = fp, fm
            if sig_p != sig_m:
                grad[idx] = np.nan
                continue
        # divide by the step actually stored (float32 storage rounds orig +- h)
        grad[idx] = (fp - fm) / (xp - xm)
    return grad


def grad_close(auto: np.ndarray, numeric: np.ndarray, rel: float = 1e-2, abs_tol: float = 1e-4) -> bool:
    """Agreement within rel (relative) or abs_tol (absolute), whichever is looser."""
    auto = np.asarray(auto, dtype=np.float64)
    diff = np.abs(auto - numeric)
    bound = np.maximum(abs_tol, rel * np.maximum(np.abs(auto), np.abs(numeric)))
    return bool(np.all(diff <= bound))


def cross_entropy_direct(logits, target: int) -> float:
    z = [float(v) for v in logits]
    return -(z[target] - math.log(sum(math.exp(v) for v in z)))


def levenshtein(a, b) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def clustered_block_reference(h_prev: np.ndarray, gates: np.ndarray, separate, proj, shared_proj,
                              shared) -> tuple[np.ndarray, np.ndarray]:
    """Straight-line re-evaluation of one clustered block for a single utterance.

    ``separate`` / ``shared`` are callables mapping [T, d] -> [T, d]; ``proj`` is
    a list of (W [d, d], b [d]) pairs and ``shared_proj`` one (W [J, d], b [J]).
    Returns (h [T, d], w_out [T, J]).
    """
    n_clusters = len(separate)
    e = [np.asarray(separate[j](h_prev), dtype=np.float64) for j in range(n_clusters)]
    v = [e[j] * float(gates[j]) for j in range(n_clusters)]
    w_sum = sum(v[j] @ np.asarray(proj[j][0], np.float64).T + proj[j][1] for j in range(n_clusters))
    w_out = np.tanh(w_sum) @ np.asarray(shared_proj[0], np.float64).T + shared_proj[1]
    w_concat = np.exp(w_out - w_out.max(axis=1, keepdims=True))
    w_concat /= w_concat.sum(axis=1, keepdims=True)
    s = [w_concat[:, j:j + 1] * v[j] for j in range(n_clusters)]
    mixed = sum(s)
    return np.asarray(shared(mixed.astype(np.float32)), dtype=np.float64), w_out
