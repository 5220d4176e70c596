#!/usr/bin/env python3
"""Run the desk-scale experiment and optionally record the regression fixture.

Examples:
    python3 scripts/run_desk_experiment.py --work /tmp/desk
    python3 scripts/run_desk_experiment.py --work /tmp/desk --steps1 400 \
        --steps2 1200 --lr1 3e-3 --lr2 1e-3 --record-fixture
"""

import argparse
import json
import tempfile
from pathlib import Path

import torch

from mpseg.experiment import desk_run_config, result_record, run_desk_experiment

FIXTURE = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "e2e_dice.json"


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--work", default=None, help="working directory (default: a temp dir)")
    ap.add_argument("--per-domain", type=int, default=40)
    ap.add_argument("--steps1", type=int, default=500)
    ap.add_argument("--steps2", type=int, default=1500)
    ap.add_argument("--lr1", type=float, default=3e-3)
    ap.add_argument("--lr2", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--data-seed", type=int, default=1)
    ap.add_argument("--noise", type=float, default=0.05)
    ap.add_argument("--distractors", type=int, default=1, help="lookalike lesions per phantom")
    ap.add_argument(
        "--freeze-decoder",
        action="store_true",
        help="keep the randomly initialized decoder frozen (reference protocol)",
    )
    ap.add_argument("--threads", type=int, default=1, help="torch CPU threads")
    ap.add_argument(
        "--record-fixture",
        action="store_true",
        help=f"write the result to {FIXTURE} for the regression gate",
    )
    args = ap.parse_args()
    torch.set_num_threads(args.threads)
    config = desk_run_config(
        per_domain=args.per_domain,
        steps={"step1": args.steps1, "step2": args.steps2},
        lr={"step1": args.lr1, "step2": args.lr2},
        seed=args.seed,
        data_seed=args.data_seed,
        noise_std=args.noise,
        distractor_count=args.distractors,
        train_decoder=not args.freeze_decoder,
    )
    work = args.work or tempfile.mkdtemp(prefix="mpseg-desk-")
    result = run_desk_experiment(work, config)
    print(result.summary())
    print(f"artifacts under {work}")
    if args.record_fixture:
        FIXTURE.parent.mkdir(parents=True, exist_ok=True)
        FIXTURE.write_text(json.dumps(result_record(result), indent=2) + "\n")
        print(f"fixture -> {FIXTURE}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
