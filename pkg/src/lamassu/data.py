"""Synthetic multilingual transduction corpus.

Two source languages (disjoint 16-token alphabets) are "spoken" as noisy
frame sequences; each utterance carries labels in one of three target
languages. Target 0 keeps source order, target 1 reverses it and target 2
swaps adjacent pairs, each composed with a fixed token bijection per
(source, target) pair.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LANGUAGE_SEED = 20230517
SPLIT_CODES = {"train": 0, "dev": 1, "test": 2}
TRANSFORMS = ("identity", "reverse", "pair_swap")
SOURCE_NAMES = ("s0", "s1")
TARGET_NAMES = ("t0", "t1", "t2")


def apply_transform(tokens: list[str], kind: str) -> list[str]:
    if kind == "identity":
        return list(tokens)
    if kind == "reverse":
        return list(reversed(tokens))
    if kind == "pair_swap":
        out = list(tokens)
        for i in range(0, len(out) - 1, 2):
            out[i], out[i + 1] = out[i + 1], out[i]
        return out
    raise ValueError(f"unknown transform {kind!r}")


@dataclass
class ToyLanguageSpec:
    sources: list[list[str]]
    targets: list[list[str]]
    maps: dict[tuple[int, int], dict[str, str]]
    transforms: tuple[str, ...] = TRANSFORMS

    @classmethod
    def build(cls, n_tokens: int = 16, overlap: int = 4) -> "ToyLanguageSpec":
        if not 0 <= overlap <= n_tokens:
            raise ValueError("overlap must lie in [0, n_tokens]")
        sources = [[f"{name}{i:02d}" for i in range(n_tokens)] for name in ("A", "B")]
        shared = [f"x{i:02d}" for i in range(overlap)]
        t0 = [f"p{i:02d}" for i in range(n_tokens - overlap)] + shared
        t1 = shared + [f"q{i:02d}" for i in range(n_tokens - overlap)]
        t2 = [f"r{i:02d}" for i in range(n_tokens)]
        targets = [t0, t1, t2]
        maps = {}
        shared_set = set(shared)
        for j, src in enumerate(sources):
            for k, tgt in enumerate(targets):
                attempt = 0
                while True:
                    rng = np.random.default_rng([LANGUAGE_SEED, j, k, attempt])
                    mapping = {s: tgt[p] for s, p in zip(src, rng.permutation(n_tokens))}
                    # t0 and t1 share tokens; a source token reaching the shared
                    # set under both maps could make t0 and t1 labels coincide
                    # (unavoidable once the overlap exceeds half the alphabet)
                    if k != 1 or 2 * overlap > n_tokens or not {s for s in src if mapping[s] in shared_set} & \
                            {s for s in src if maps[(j, 0)][s] in shared_set}:
                        break
                    attempt += 1
                maps[(j, k)] = mapping
        return cls(sources, targets, maps)

    @property
    def num_sources(self) -> int:
        return len(self.sources)

    @property
    def num_targets(self) -> int:
        return len(self.targets)

    def translate(self, source: list[str], j: int, k: int) -> list[str]:
        mapping = self.maps[(j, k)]
        return apply_transform([mapping[s] for s in source], self.transforms[k])

    def codebook(self, d_x: int) -> dict[str, np.ndarray]:
        rng = np.random.default_rng([LANGUAGE_SEED, d_x, 7])
        tokens = [t for src in self.sources for t in src]
        rows = rng.normal(0.0, 1.0, size=(len(tokens), d_x)).astype(np.float32)
        return dict(zip(tokens, rows))


@dataclass
class FeatureConfig:
    d_x: int = 16
    sigma: float = 0.1
    span_min: int = 2
    span_max: int = 4
    tail_frames: int = 3


def featurize(tokens: list[str], seed, spec: ToyLanguageSpec, cfg: FeatureConfig,
              return_spans: bool = False):
    """Render source tokens as [T, d_x] frames.

    Each token repeats its codebook row for a random span of frames, a run of
    all-zero "silence" frames closes the utterance, and Gaussian noise is added
    to everything.
    """
    book = spec.codebook(cfg.d_x)
    unknown = [t for t in tokens if t not in book]
    if unknown:
        raise ValueError(f"unknown source token(s): {unknown}")
    rng = np.random.default_rng(seed)
    spans = rng.integers(cfg.span_min, cfg.span_max + 1, size=len(tokens))
    rows = [np.repeat(book[t][None, :], n, axis=0) for t, n in zip(tokens, spans)]
    rows.append(np.zeros((cfg.tail_frames, cfg.d_x), dtype=np.float32))
    clean = np.concatenate(rows, axis=0)
    feats = clean + rng.normal(0.0, cfg.sigma, size=clean.shape) if cfg.sigma > 0 else clean
    feats = feats.astype(np.float32)
    if return_spans:
        return feats, spans.tolist()
    return feats


def utterance_seed(seed: int, split: str, index: int, purpose: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, SPLIT_CODES[split], index, purpose])


@dataclass
class Utterance:
    uid: str
    j: int | None
    k: int
    source: list[str]
    labels: list[str]
    features: np.ndarray | None = field(default=None, repr=False)

    @property
    def direction(self) -> str:
        src = SOURCE_NAMES[self.j] if self.j is not None else "?"
        return f"{src}-{TARGET_NAMES[self.k]}"

    @property
    def num_frames(self) -> int:
        return 0 if self.features is None else self.features.shape[0]


def direction_name(j: int, k: int) -> str:
    return f"{SOURCE_NAMES[j]}-{TARGET_NAMES[k]}"


def source_language_of(tokens: list[str], spec: ToyLanguageSpec) -> int:
    """Source language read off the reference transcript (scoring side only)."""
    for j, alphabet in enumerate(spec.sources):
        if tokens and all(t in alphabet for t in tokens):
            return j
    raise ValueError("transcript does not belong to a single source alphabet")


@dataclass
class Corpus:
    seed: int
    split: str
    features: FeatureConfig
    utterances: list[Utterance]

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def __getitem__(self, i):
        return self.utterances[i]


def generate_corpus(seed: int, n_utts: int, split: str, spec: ToyLanguageSpec | None = None,
                    features: FeatureConfig | None = None, min_len: int = 3, max_len: int = 12) -> Corpus:
    """Round-robin over the (source, target) directions; fully determined by the seed."""
    if n_utts < 1:
        raise ValueError("n_utts must be >= 1")
    spec = spec or ToyLanguageSpec.build()
    features = features or FeatureConfig()
    n_dirs = spec.num_sources * spec.num_targets
    utts = []
    for i in range(n_utts):
        j, k = divmod(i % n_dirs, spec.num_targets)
        rng = np.random.default_rng(utterance_seed(seed, split, i, 0))
        length = int(rng.integers(min_len, max_len + 1))
        source = [spec.sources[j][t] for t in rng.integers(0, len(spec.sources[j]), size=length)]
        labels = spec.translate(source, j, k)
        utts.append(Utterance(f"{split}-{i:06d}", j, k, source, labels))
    corpus = Corpus(seed, split, features, utts)
    attach_features(corpus, spec)
    return corpus


def attach_features(corpus: Corpus, spec: ToyLanguageSpec) -> None:
    for utt in corpus.utterances:
        index = int(utt.uid.rsplit("-", 1)[1])
        utt.features = featurize(utt.source, utterance_seed(corpus.seed, corpus.split, index, 1),
                                 spec, corpus.features)


# -- file formats ---------------------------------------------------------------

HEADER_TAG = "#lamassu-corpus"


def write_corpus(corpus: Corpus, path) -> None:
    f = corpus.features
    header = (f"{HEADER_TAG}\tversion=1\tseed={corpus.seed}\tsplit={corpus.split}\td_x={f.d_x}"
              f"\tsigma={f.sigma!r}\tspan_min={f.span_min}\tspan_max={f.span_max}\ttail_frames={f.tail_frames}")
    lines = [header]
    for u in corpus.utterances:
        j = "-" if u.j is None else str(u.j)
        lines.append("\t".join([u.uid, j, str(u.k), " ".join(u.source), " ".join(u.labels)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_corpus(path, spec: ToyLanguageSpec | None = None) -> Corpus:
    """Load records and regenerate features from the id-derived seeds.

    The source-cluster field may be ``-`` (unknown); inference never needs it.
    """
    spec = spec or ToyLanguageSpec.build()
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or not text[0].startswith(HEADER_TAG):
        raise ValueError(f"{path}: missing corpus header")
    meta = dict(item.split("=", 1) for item in text[0].split("\t")[1:])
    feats = FeatureConfig(int(meta["d_x"]), float(meta["sigma"]), int(meta["span_min"]),
                          int(meta["span_max"]), int(meta["tail_frames"]))
    utts = []
    for line in text[1:]:
        if not line.strip():
            continue
        uid, j, k, src, lab = line.split("\t")
        utts.append(Utterance(uid, None if j == "-" else int(j), int(k), src.split(), lab.split()))
    corpus = Corpus(int(meta["seed"]), meta["split"], feats, utts)
    attach_features(corpus, spec)
    return corpus


def write_vocab(tokens: list[str], path) -> None:
    Path(path).write_text("".join(t + "\n" for t in tokens), encoding="utf-8")


def read_vocab(path) -> list[str]:
    return [line for line in Path(path).read_text(encoding="utf-8").splitlines() if line]


def file_checksum(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
