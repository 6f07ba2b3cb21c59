"""Fill the experiment cache used by the acceptance tests.

Runs every (arm, seed) of the toy comparison grid that is not cached yet and
prints a summary table. Usage::

    python3 scripts/run_experiments.py [--cache DIR] [--arms clustered shared ...] [--seeds 0 1 2]
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from lamassu.experiments import ARMS, SEEDS, arm_overrides, run

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--cache", type=Path, default=ROOT / ".experiment-cache", help="cache directory")
    p.add_argument("--arms", nargs="+", choices=sorted(ARMS), default=list(ARMS), help="arms to run")
    p.add_argument("--seeds", nargs="+", type=int, default=list(SEEDS), help="optimizer seeds")
    p.add_argument("--force", action="store_true", help="retrain even when cached")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s", stream=sys.stderr)

    def progress(rec):
        if rec["step"] % 250 == 0:
            logging.info("  step %d loss %.3f", rec["step"], rec["loss"])

    rows = []
    for seed in args.seeds:
        for arm in args.arms:
            t = time.time()
            res = run(arm_overrides(arm, seed), args.cache, force=args.force, log_fn=progress)
            r = res.report
            rows.append((arm, seed, r.get("avg-identity", "ter"), r.get("avg-transformed", "bleu"),
                         r.get("avg-all", "bleu"), res.seconds))
            logging.info("%s seed %d: %s (%.0fs wall)", arm, seed, "cached" if res.cached else "trained",
                         time.time() - t)
    print(f"{'arm':16}{'seed':>5}{'id TER':>9}{'tr BLEU':>9}{'all BLEU':>10}{'cpu s':>8}")
    for arm, seed, ter, tb, ab, sec in rows:
        print(f"{arm:16}{seed:5d}{ter:9.2f}{tb:9.2f}{ab:10.2f}{sec:8.0f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
