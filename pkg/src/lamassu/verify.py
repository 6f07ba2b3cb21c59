"""Verification suites runnable from the command line (``lamassu verify``).

Each suite returns a list of :class:`Check` results; a suite passes when all
of its checks pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import tensor as T
from .config import LossConfig, ModelConfig
from .data import ToyLanguageSpec, generate_corpus
from .decode import greedy_decode_streaming
from .encoder import ClusteredBlock, ClusteredEncoder
from .heads import JointNetwork, merge_vocabularies
from .losses import ctc_feasible, ctc_loss, transducer_loss
from .model import LamassuModel, make_batch
from .nn import (DropoutState, LayerNorm, LSTMCell, MultiHeadAttention, TransformerLayer, attention_mask)
from .oracles import (clustered_block_reference, ctc_logprob_enum, finite_difference_grad, grad_close,
                      transducer_logprob_enum)
from .tensor import Tensor
from .train import GateSchedule


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


# -- gradient checks -----------------------------------------------------------


def gradient_check(build, leaves: list[Tensor], rng: np.random.Generator, max_entries: int = 24,
                   h: float = 1e-3, rel: float = 1e-2, abs_tol: float = 1e-4) -> tuple[bool, float, int]:
    """Compare autodiff and central differences for scalar ``build()`` w.r.t. ``leaves``.

    Autodiff runs at the production float32 precision. The central
    differences start from the same float32 values but evaluate the forward
    pass in float64 (every float32 parameter in the graph is swapped for a
    float64 copy), so the oracle is not dominated by float32 rounding, which
    is about 1e-4 absolute at h=1e-3. Returns (passed, worst absolute
    difference, entries skipped). Entries whose +-h step flips the sign of
    any relu input sit on a kink where central differences are not a
    derivative estimate; they are skipped and counted. At most
    ``max_entries`` randomly chosen entries per leaf are probed.
    """
    for leaf in leaves:
        leaf.grad = None
    loss = build()
    loss.backward()
    autos = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]
    params = [n for n in T._topo_order(loss) if not n._parents and n.data.dtype == np.float32]
    params += [leaf for leaf in leaves if all(leaf is not p for p in params)]
    saved = [p.data for p in params]
    for p in params:
        p.data = p.data.astype(np.float64)
        p.grad = None

    def f():
        with T.no_grad(), T.compute_dtype(np.float64), T.record_kinks() as kinks:
            value = float(build().data)
        return value, tuple(k.tobytes() for k in kinks)

    worst = 0.0
    ok = True
    skipped = 0
    try:
        for leaf, auto in zip(leaves, autos):
            all_idx = list(np.ndindex(leaf.shape))
            pick = rng.choice(len(all_idx), size=min(max_entries, len(all_idx)), replace=False)
            idxs = [all_idx[i] for i in sorted(pick)]
            num = finite_difference_grad(f, leaf.data, h, idxs)
            a = np.array([auto[i] for i in idxs], dtype=np.float64)
            n = np.array([num[i] for i in idxs])
            keep = ~np.isnan(n)
            skipped += int(np.sum(~keep))
            a, n = a[keep], n[keep]
            worst = max(worst, float(np.max(np.abs(a - n))) if len(a) else 0.0)
            ok &= grad_close(a, n, rel, abs_tol)
    finally:
        for p, data in zip(params, saved):
            p.data = data
    return ok, worst, skipped


def _projected(out: Tensor, rng: np.random.Generator) -> callable:
    proj = Tensor(rng.normal(0.0, 1.0, size=out.shape) / np.sqrt(out.size))
    return lambda o: T.tsum(T.mul(o, proj))


def grad_suite(seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    checks: list[Check] = []

    def leaf(*shape, scale=1.0):
        return T.parameter(rng.normal(0.0, scale, size=shape))

    def run(name, fn, leaves):
        with T.no_grad():
            out = fn()
        if out.size == 1:
            build = fn
        else:
            reduce = _projected(out, rng)
            build = lambda: reduce(fn())  # noqa: E731
        ok, worst, skipped = gradient_check(build, leaves, rng)
        checks.append(Check(f"grad:{name}", ok, f"max|auto-fd|={worst:.2e}, {skipped} kink entries skipped"))

    a, b = leaf(3, 4), leaf(4, 2)
    run("matmul", lambda: T.matmul(a, b), [a, b])
    x, y = leaf(2, 3), leaf(2, 3)
    run("add", lambda: x + y, [x, y])
    run("sub", lambda: x - y, [x, y])
    run("mul", lambda: x * y, [x, y])
    run("scale", lambda: T.scale(x, 0.7), [x])
    run("tanh", lambda: T.tanh(x), [x])
    run("sigmoid", lambda: T.sigmoid(x), [x])
    r = T.parameter(rng.uniform(0.2, 1.0, size=(2, 3)) * rng.choice([-1, 1], size=(2, 3)))
    run("relu", lambda: T.relu(r), [r])
    s = leaf(2, 5)
    run("softmax", lambda: T.softmax(s, axis=-1), [s])
    run("log_softmax", lambda: T.log_softmax(s, axis=-1), [s])
    run("cross_entropy", lambda: T.cross_entropy(s, [1, 4]), [s])
    g, be = leaf(5, scale=0.5), leaf(5, scale=0.5)
    run("layer_norm", lambda: T.layer_norm(s, g, be), [s, g, be])
    emb = leaf(6, 3)
    run("embedding", lambda: T.embedding(emb, [[0, 2, 2], [5, 1, 0]]), [emb])

    drop = DropoutState(0.0)
    xa = leaf(1, 3, 8)
    mha = MultiHeadAttention(8, 2, rng)
    mask = attention_mask(2, np.array([3]), 3)
    run("attention", lambda: mha(xa, mask), [xa] + mha.parameters()[:2])
    layer = TransformerLayer(8, 2, rng, drop)
    run("transformer_layer", lambda: layer(xa, mask), [xa] + layer.parameters())
    cell = LSTMCell(4, 3, rng)
    xu, h0, c0 = leaf(1, 4), leaf(1, 3), leaf(1, 3)
    run("lstm_step", lambda: cell(xu, (h0, c0))[0], [xu, h0, c0] + cell.parameters())
    block = ClusteredBlock(2, 8, 2, 1, 1, rng, drop)
    gates = np.ones((1, 2), np.float32)
    run("clustered_block", lambda: block(xa, gates, mask)[0], [xa] + block.proj[0].parameters()
        + block.shared_proj.parameters())
    joint = JointNetwork(8, 6, 5, 4, rng)
    he, hp = leaf(1, 3, 8), leaf(1, 2, 6)
    run("joint", lambda: joint(he, hp), [he, hp] + joint.parameters())

    z = leaf(3, 3, 4)
    run("transducer_loss", lambda: transducer_loss(z, [2, 3]), [z])
    zc = leaf(4, 4)
    run("ctc_loss", lambda: ctc_loss(zc, [2, 2]), [zc])

    checks.append(full_model_grad_check(seed))
    return checks


def tiny_model(variant: str = "UNI", clusters: int = 2, seed: int = 0, target_lid: bool = True,
               d: int = 8, chunk_frames: int = 2) -> LamassuModel:
    cfg = ModelConfig(variant=variant, d=d, heads=2, blocks=1, clusters=clusters, separate_layers=1,
                      shared_layers=1, d_p=6, d_j=6, pred_layers=1, chunk_frames=chunk_frames,
                      target_lid_for_encoder=target_lid, dropout=0.0)
    spec = ToyLanguageSpec.build()
    return LamassuModel(cfg, merge_vocabularies(spec.targets), d_x=4, seed=seed)


def full_model_grad_check(seed: int = 0, rel: float = 1e-2, abs_tol: float = 1e-4) -> Check:
    """Every parameter of a tiny model on a 2-frame, 1-label batch, all entries probed."""
    rng = np.random.default_rng(seed)
    model = tiny_model(seed=seed)
    spec = ToyLanguageSpec.build()
    from .data import Utterance
    utt = Utterance("train-000000", 0, 1, [spec.sources[0][3]], [spec.translate([spec.sources[0][3]], 0, 1)[0]],
                    rng.normal(size=(2, 4)).astype(np.float32))
    batch = make_batch([utt])
    loss_cfg = LossConfig(alpha=0.75, beta=0.4, ctc=True)
    gates = np.array([[1.0, 0.0]], np.float32)

    def build():
        return model.losses(batch, gates, loss_cfg)["total"]

    params = model.parameters()
    ok_all, worst, skipped, total = True, 0.0, 0, 0
    for p in params:
        ok, w, sk = gradient_check(build, [p], rng, max_entries=p.size, rel=rel, abs_tol=abs_tol)
        ok_all &= ok
        worst = max(worst, w)
        skipped += sk
        total += p.size
    return Check("grad:full_model_step", ok_all,
                 f"{len(params)} tensors, {total} entries, max|auto-fd|={worst:.2e}, {skipped} kink entries skipped")


# -- DP losses against enumeration -------------------------------------------------


def oracle_suite(n: int = 200, seed: int = 0, tol: float = 1e-6) -> list[Check]:
    rng = np.random.default_rng(seed)
    worst_t = worst_c = 0.0
    for _ in range(n):
        total = int(rng.integers(1, 9))
        n_t = int(rng.integers(1, total + 1))
        n_u = total - n_t
        vocab = int(rng.integers(1, 4))
        labels = [int(x) for x in rng.integers(1, vocab + 1, size=n_u)]
        z = rng.normal(0.0, 2.0, size=(n_t, n_u + 1, vocab + 1)).astype(np.float32)
        dp = -transducer_loss(Tensor(z), labels).item()
        worst_t = max(worst_t, abs(dp - transducer_logprob_enum(z, labels)))
        while not ctc_feasible(labels, n_t):
            labels = labels[:-1]
        zc = rng.normal(0.0, 2.0, size=(n_t, vocab + 1)).astype(np.float32)
        dp_c = -ctc_loss(Tensor(zc), labels).item()
        worst_c = max(worst_c, abs(dp_c - ctc_logprob_enum(zc, labels)))
    return [Check("oracle:transducer_vs_enumeration", worst_t < tol, f"{n} instances, max|Δ|={worst_t:.2e}"),
            Check("oracle:ctc_vs_enumeration", worst_c < tol, f"{n} instances, max|Δ|={worst_c:.2e}")]


# -- streaming --------------------------------------------------------------------


def encoder_stream_gap(encoder: ClusteredEncoder, x: np.ndarray) -> float:
    """max |offline chunk-masked forward - chunk-incremental forward| for one utterance."""
    with T.no_grad():
        full = encoder(x[None], np.ones((1, encoder.clusters), np.float32)).h_enc.data[0]
        stream = encoder.stream()
        c = encoder.chunk_frames
        parts = [stream.push(x[s: s + c]).data for s in range(0, x.shape[0], c)]
    return float(np.max(np.abs(full - np.concatenate(parts, axis=0))))


def stream_suite(model: LamassuModel | None = None, corpus=None, n: int = 20, seed: int = 0,
                 tol: float = 1e-5) -> list[Check]:
    model = model or tiny_model(seed=seed, d=16, chunk_frames=4)
    if corpus is None:
        from .data import FeatureConfig
        corpus = generate_corpus(seed, n, "test", features=FeatureConfig(d_x=model.d_x))
    utts = corpus.utterances[:n]
    worst = 0.0
    same = True
    for u in utts:
        x = model.prepare(u.features, u.k)
        worst = max(worst, encoder_stream_gap(model.encoder, x))
        a = greedy_decode_streaming(model, u.features, u.k)
        b = greedy_decode_streaming(model, u.features, u.k, offline=True)
        same &= a.ids == b.ids and a.trace.frames == b.trace.frames
    return [Check("stream:encoder_incremental_equals_offline", worst < tol, f"{len(utts)} utts, max|Δ|={worst:.2e}"),
            Check("stream:decode_incremental_equals_offline", same, f"{len(utts)} utts")]


def future_invariance(model_fn, x: np.ndarray, t: int, chunk: int, rng: np.random.Generator) -> float:
    """max |Δ output[:chunk_end(t)]| after randomizing every frame in later chunks."""
    end = (t // chunk + 1) * chunk
    y0 = model_fn(x)
    x2 = x.copy()
    x2[..., end:, :] = rng.normal(size=x2[..., end:, :].shape)
    y1 = model_fn(x2)
    return float(np.max(np.abs(y0[..., :end, :] - y1[..., :end, :])))


# -- gates and block fidelity ----------------------------------------------------


def block_fidelity(n: int = 50, seed: int = 0, tol: float = 1e-5) -> list[Check]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    annihilated = True
    drop = DropoutState(0.0)
    for i in range(n):
        clusters = int(rng.integers(1, 4))
        d = 8
        block = ClusteredBlock(clusters, d, 2, 1, 1, rng, drop)
        n_t = int(rng.integers(1, 7))
        x = rng.normal(size=(n_t, d)).astype(np.float32)
        gates = rng.integers(0, 2, size=clusters).astype(np.float32)
        if i % 3 == 0:
            gates[:] = 1.0
        with T.no_grad():
            h, _ = block(Tensor(x[None]), gates[None], None)
            terms = block.mix_terms([s(Tensor(x[None])) for s in block.separate], gates[None])
        ref, _ = clustered_block_reference(
            x, gates,
            [lambda v, s=s: s(Tensor(v[None])).data[0] for s in block.separate],
            [(p.weight.data, p.bias.data) for p in block.proj],
            (block.shared_proj.weight.data, block.shared_proj.bias.data),
            lambda v: block.shared(Tensor(v[None])).data[0])
        worst = max(worst, float(np.max(np.abs(h.data[0] - ref))))
        for jj in np.flatnonzero(gates == 0):
            annihilated &= bool(np.all(terms["s"][jj].data == 0.0))
    return [Check("gates:block_matches_reference", worst < tol, f"{n} blocks, max|Δ|={worst:.2e}"),
            Check("gates:zero_gate_annihilation", annihilated, "s_j == 0 exactly when g_j == 0")]


def gates_suite(seed: int = 0) -> list[Check]:
    checks = block_fidelity(seed=seed)
    ok = True
    for total, frac in ((100, 0.5), (100, 0.9), (100, 0.3), (3000, 0.7), (7, 1.0)):
        sched = GateSchedule(total, frac)
        for step in range(total):
            g = sched.gates(step, [0, 1], 2)
            # exact rational arithmetic on the decimal fraction, independent of the float path
            expect_ones = step >= math.floor((1 - Fraction(repr(frac))) * total)
            ok &= bool(np.all(g == 1)) if expect_ones else bool(np.all(g.sum(axis=1) == 1) and set(g.ravel()) <= {0, 1})
    checks.append(Check("gates:phase_boundary_exact", ok, "one-hot before boundary, all-ones from it"))
    return checks


SUITES = {"grad": grad_suite, "oracle": oracle_suite, "stream": stream_suite, "gates": gates_suite}


def run_suite(name: str, **kwargs) -> list[Check]:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    return SUITES[name](**kwargs)
