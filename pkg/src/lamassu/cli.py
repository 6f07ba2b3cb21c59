"""``lamassu`` command-line entry point.

Exit codes: 0 success, 1 contract or verification failure, 2 usage error.

Data directory layout written by ``gen-data``::

    config.ini               fully resolved run configuration
    train.txt dev.txt test.txt
    vocab.t0.txt ...         one token per line, per target language
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import tensor as T
from .checkpoint import CheckpointError
from .config import PRESETS, SECTIONS, ConfigError, RunConfig, load_config
from .data import (TARGET_NAMES, Corpus, FeatureConfig, ToyLanguageSpec, generate_corpus, read_corpus,
                   read_vocab, write_corpus, write_vocab)
from .decode import greedy_decode_streaming
from .evaluate import evaluate
from .heads import merge_vocabularies
from .train import Trainer, TrainingDiverged
from .verify import SUITES, run_suite

log = logging.getLogger("lamassu")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SPLITS = ("train", "dev", "test")


class UsageError(Exception):
    pass


# -- shared helpers ---------------------------------------------------------------


def _parse_set(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config, args.preset, _parse_set(args.set))
    log.info("resolved config:\n%s", cfg.to_ini())
    return cfg


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI config file with sections " + ", ".join(SECTIONS))
    p.add_argument("--preset", choices=sorted(PRESETS), help="named preset applied before the config file")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", default=[],
                   help="override one config value; repeatable; wins over the file")


def _vocab_from_dir(data: Path):
    files = sorted(data.glob("vocab.t*.txt"))
    if not files:
        raise UsageError(f"{data}: no vocab.t<k>.txt files")
    return merge_vocabularies([read_vocab(f) for f in files])


def _corpus(data: Path, split: str) -> Corpus:
    path = data / f"{split}.txt"
    if not path.exists():
        raise UsageError(f"{path}: no such corpus file")
    return read_corpus(path)


# -- subcommands ------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _resolve_config(args)
    d = cfg.data
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    spec = ToyLanguageSpec.build(overlap=d.overlap)
    feats = FeatureConfig(d.d_x, d.sigma, d.span_min, d.span_max, d.tail_frames)
    for split, n in zip(SPLITS, (d.n_train, d.n_dev, d.n_test)):
        corpus = generate_corpus(d.seed, n, split, spec, feats, d.min_len, d.max_len)
        if args.no_source_labels and split != "train":
            for u in corpus.utterances:
                u.j = None
        write_corpus(corpus, out / f"{split}.txt")
        print(f"{split}: {n} utterances -> {out / f'{split}.txt'}")
    for k, tokens in enumerate(spec.targets):
        write_vocab(tokens, out / f"vocab.{TARGET_NAMES[k]}.txt")
    (out / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    return EXIT_OK


def cmd_train(args) -> int:
    if args.resume:
        trainer = Trainer.load(args.resume)
        if args.config or args.preset or args.set:
            log.warning("--resume uses the checkpoint's config; --config/--preset/--set ignored")
        log.info("resumed at step %d; config:\n%s", trainer.state.step, trainer.cfg.to_ini())
        cfg = trainer.cfg
    else:
        cfg = _resolve_config(args)
        if cfg.model.clusters == 1 and cfg.loss.alpha != 0:
            log.info("alpha coerced to 0 (single cluster, no LID loss)")
        trainer = None
    corpus = _corpus(args.data, "train")
    if trainer is None:
        trainer = Trainer(cfg, _vocab_from_dir(args.data), corpus.features.d_x)
    T.set_debug(args.debug)
    log_file = open(args.log, "a", encoding="utf-8") if args.log else None
    start = time.time()

    def on_step(rec):
        line = json.dumps({k: (round(v, 6) if isinstance(v, float) else v) for k, v in rec.items()})
        if log_file:
            log_file.write(line + "\n")
        if rec["step"] % cfg.optim.log_every == 0 or rec["step"] == cfg.schedule.total_steps - 1:
            log.info("step %d phase %d loss %.4f transducer %.4f lid %.4f ctc %.4f (%.0fs)", rec["step"],
                     rec["phase"], rec["loss"], rec["transducer"], rec["lid"], rec["ctc"], time.time() - start)

    try:
        trainer.fit(corpus, until=args.until, log_fn=on_step, checkpoint_path=args.out,
                    checkpoint_every=args.checkpoint_every, log_every=1)
    finally:
        if log_file:
            log_file.close()
    trainer.save(args.out)
    skipped = trainer.state.counters.get("ctc_skipped", 0)
    if skipped:
        log.info("ctc skipped %d infeasible utterances", skipped)
    print(f"checkpoint -> {args.out} (step {trainer.state.step})")
    return EXIT_OK


def _target_langs(args, num_targets: int):
    if args.all:
        return None
    if not 0 <= args.target_lang < num_targets:
        raise UsageError(f"--target-lang {args.target_lang} out of range [0, {num_targets})")
    return [args.target_lang]


def cmd_eval(args) -> int:
    trainer = Trainer.load(args.checkpoint)
    model = trainer.model
    ks = _target_langs(args, model.num_targets)
    corpus = _corpus(args.data, args.split)
    report = evaluate(model, corpus, ks=ks, spec=ToyLanguageSpec.build(overlap=trainer.cfg.data.overlap),
                      restrict_to_target=args.restrict_to_target)
    if args.report:
        report.write(args.report)
    print(report.table())
    return EXIT_OK


def cmd_decode(args) -> int:
    model = Trainer.load(args.checkpoint).model
    ks = _target_langs(args, model.num_targets)
    corpus = _corpus(args.data, args.split)
    shown = 0
    for u in corpus.utterances:
        if ks is not None and u.k not in ks:
            continue
        if args.limit and shown >= args.limit:
            break
        res = greedy_decode_streaming(model, u.features, u.k, restrict_to_target=args.restrict_to_target)
        print(f"{u.uid}\t{TARGET_NAMES[u.k]}\t{' '.join(res.tokens)}\t{' '.join(map(str, res.trace.frames))}")
        shown += 1
    return EXIT_OK


def cmd_verify(args) -> int:
    checks = run_suite(args.suite)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  {c.detail}")
    failed = sum(not c.passed for c in checks)
    print(f"{args.suite}: {len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_OK if not failed else EXIT_FAIL


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lamassu", description="Streaming multilingual transducer toolkit "
                                     "(toy synthetic speech translation).")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug-level logging")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-data", help="generate train/dev/test corpora and vocabularies")
    _add_config_flags(p)
    p.add_argument("--out", type=Path, required=True, help="output data directory")
    p.add_argument("--no-source-labels", action="store_true",
                   help="write '-' for the source-cluster field of dev/test records")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_config_flags(p)
    p.add_argument("--data", type=Path, required=True, help="data directory from gen-data")
    p.add_argument("--out", type=Path, required=True, help="checkpoint path to write")
    p.add_argument("--resume", type=Path, help="continue from this checkpoint (its config is used)")
    p.add_argument("--until", type=int, help="stop after this many total steps (default: schedule.total_steps)")
    p.add_argument("--checkpoint-every", type=int, default=0, metavar="N",
                   help="also write the checkpoint every N steps (0: only at the end)")
    p.add_argument("--log", type=Path, help="append one JSON record per step (phase and losses) to this file")
    p.add_argument("--debug", action="store_true", help="check every forward op for NaN/Inf")
    p.set_defaults(func=cmd_train)

    for name, func, text in (("eval", cmd_eval, "score a checkpoint and write a report"),
                             ("decode", cmd_decode, "print greedy streaming hypotheses")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--checkpoint", type=Path, required=True, help="checkpoint from train")
        p.add_argument("--data", type=Path, required=True, help="data directory from gen-data")
        p.add_argument("--split", choices=SPLITS, default="test", help="corpus split (default: test)")
        group = p.add_mutually_exclusive_group(required=True)
        group.add_argument("--target-lang", type=int, metavar="K", help="only target language K")
        group.add_argument("--all", action="store_true", help="every target language")
        p.add_argument("--restrict-to-target", action="store_true",
                       help="UNI only: mask outputs outside the requested target vocabulary")
        if name == "eval":
            p.add_argument("--report", type=Path, help="write the JSON-lines report here")
        else:
            p.add_argument("--limit", type=int, default=0, help="decode at most this many utterances (0: all)")
        p.set_defaults(func=func)

    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("--suite", choices=sorted(SUITES), required=True, help="which suite to run")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as err:
        print(f"lamassu {args.command}: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, CheckpointError, FloatingPointError) as err:
        print(f"lamassu {args.command}: {err}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as err:
        print(f"lamassu {args.command}: {err}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
