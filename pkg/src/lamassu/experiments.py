"""Cached end-to-end runs: generate data, train, evaluate.

A run is identified by its fully resolved config plus a digest of the
package source, so editing any module invalidates earlier results instead of
silently reusing them. Each cache entry holds the checkpoint and a JSON record
with the held-out report and wall-clock timings.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

from .config import RunConfig, apply_overrides
from .data import FeatureConfig, ToyLanguageSpec, generate_corpus
from .evaluate import Report, evaluate
from .heads import merge_vocabularies
from .train import Trainer

log = logging.getLogger("lamassu.experiments")

PACKAGE_DIR = Path(__file__).resolve().parent


def source_digest() -> str:
    h = hashlib.sha256()
    for path in sorted(PACKAGE_DIR.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


def resolve(overrides: dict | None = None) -> RunConfig:
    return apply_overrides(RunConfig(), dict(overrides or {})).validate()


def run_key(cfg: RunConfig) -> str:
    return hashlib.sha256((cfg.to_ini() + source_digest()).encode()).hexdigest()[:20]


def feature_config(cfg: RunConfig) -> FeatureConfig:
    d = cfg.data
    return FeatureConfig(d.d_x, d.sigma, d.span_min, d.span_max, d.tail_frames)


def split_corpus(cfg: RunConfig, split: str):
    n = {"train": cfg.data.n_train, "dev": cfg.data.n_dev, "test": cfg.data.n_test}[split]
    spec = ToyLanguageSpec.build(overlap=cfg.data.overlap)
    return generate_corpus(cfg.data.seed, n, split, spec, feature_config(cfg), cfg.data.min_len, cfg.data.max_len)


@dataclass
class RunResult:
    key: str
    config: RunConfig
    report: Report
    train_seconds: float
    eval_seconds: float
    checkpoint: Path
    cached: bool

    @property
    def seconds(self) -> float:
        return self.train_seconds + self.eval_seconds


def run(overrides: dict | None, cache_dir, force: bool = False, log_fn=None) -> RunResult:
    """Train and evaluate one configuration on the test split, reusing a cached result."""
    cfg = resolve(overrides)
    key = run_key(cfg)
    cache = Path(cache_dir)
    cache.mkdir(parents=True, exist_ok=True)
    meta_path, ckpt = cache / f"{key}.json", cache / f"{key}.ckpt"
    if meta_path.exists() and ckpt.exists() and not force:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        return RunResult(key, cfg, Report.parse(meta["report"]), meta["train_seconds"], meta["eval_seconds"],
                         ckpt, True)

    spec = ToyLanguageSpec.build(overlap=cfg.data.overlap)
    log.info("run %s: training\n%s", key, cfg.to_ini())
    start = time.process_time()
    train_set = split_corpus(cfg, "train")
    trainer = Trainer(cfg, merge_vocabularies(spec.targets), cfg.data.d_x)
    trainer.fit(train_set, log_fn=log_fn)
    train_seconds = time.process_time() - start
    trainer.save(ckpt)

    start = time.process_time()
    report = evaluate(trainer.model, split_corpus(cfg, "test"), spec=spec)
    eval_seconds = time.process_time() - start
    meta = {"key": key, "config": cfg.to_ini(), "source": source_digest(), "report": report.to_text(),
            "train_seconds": train_seconds, "eval_seconds": eval_seconds}
    meta_path.write_text(json.dumps(meta, indent=1), encoding="utf-8")
    return RunResult(key, cfg, report, train_seconds, eval_seconds, ckpt, False)


# Comparison grid for the toy learning claims: three seeds per arm.
SEEDS = (0, 1, 2)
ARMS: dict[str, dict] = {
    "clustered": {},
    "shared": {"model.clusters": 1},
    "ctc": {"loss.ctc": True},
    "no-target-lid": {"model.target_lid_for_encoder": False},
}


def arm_overrides(arm: str, seed: int) -> dict:
    return {**ARMS[arm], "optim.seed": seed}
