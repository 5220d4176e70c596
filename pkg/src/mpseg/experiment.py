"""Desk-scale end-to-end experiment: synth, two-phase train, regime eval.

This is the reproducible experiment the acceptance gate runs: a single-domain
phantom dataset, the freeze/fine-tune protocol on the default encoder, and a
held-out evaluation under both box-prompt regimes. Everything goes through
the same code paths as the CLI.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass
from pathlib import Path

from .cli import checkpoint_path, cmd_synth, cmd_train, load_dataset
from .config import RunConfig, run_config_from_dict
from .evaluate import DiceReport, evaluate_volumes
from .model import load_checkpoint


@dataclass(frozen=True)
class DeskResult:
    dice_bb100: float  # held-out mean Dice, tight boxes
    dice_bb75: float  # held-out mean Dice, 75% coverage boxes
    report_bb100: DiceReport
    report_bb75: DiceReport
    train_seconds: float
    total_steps: int

    def summary(self) -> str:
        return (
            f"BB-100-100 dice {self.dice_bb100:.4f} | BB-75-75 dice {self.dice_bb75:.4f} | "
            f"{self.total_steps} steps in {self.train_seconds:.1f}s"
        )


def desk_run_config(
    per_domain: int = 40,
    steps: dict | None = None,
    lr: float | dict = None,
    seed: int = 1,
    data_seed: int = 1,
    radius_range: tuple[float, float] = (3.0, 6.0),
    noise_std: float = 0.05,
    distractor_count: int = 1,
    train_decoder: bool = True,
) -> RunConfig:
    # the mask decoder is randomly initialized here (no pretrained weights at
    # this scale), so the desk experiment trains it alongside each phase's
    # encoder-side groups; the reference protocol keeps it frozen. One
    # distractor lesion per phantom makes the box prompt load-bearing, which
    # is what puts tight boxes ahead of 75%-coverage boxes at eval.
    return run_config_from_dict(
        {
            "train": {
                "phases": ["step1", "step2"],
                "steps": steps or {"step1": 500, "step2": 1500},
                "lr": lr if lr is not None else {"step1": 3e-3, "step2": 1e-3},
                "seed": seed,
                "train_decoder": train_decoder,
                "augment_flips": True,
                "dice_loss_weight": 1.0,
            },
            "data": {
                "per_domain": per_domain,
                "train_domains": ["adult"],
                "eval_domains": ["adult"],
                "radius_range": list(radius_range),
                "noise_std": noise_std,
                "distractor_count": distractor_count,
                "seed": data_seed,
            },
        }
    )


def run_desk_experiment(work_dir: str | Path, config: RunConfig | None = None) -> DeskResult:
    """Run the full pipeline under ``work_dir`` and score the holdout split."""
    config = config or desk_run_config()
    work = Path(work_dir)
    data_dir = work / "data"
    run_dir = work / "run"
    t0 = time.perf_counter()
    cmd_synth(config, data_dir)
    cmd_train(config, run_dir, data_dir)
    train_seconds = time.perf_counter() - t0
    model, _ = load_checkpoint(checkpoint_path(run_dir, config.train.phases[-1]))
    holdout = load_dataset(data_dir, split="eval", domains=("adult",))
    reports = {
        regime: evaluate_volumes(model, holdout, prompt_regime=regime, seed=config.eval.seed)
        for regime in ("BB-100-100", "BB-75-75")
    }
    for regime, report in reports.items():
        (run_dir / f"report-{regime}.json").write_text(report.to_json(), encoding="utf-8")
    return DeskResult(
        dice_bb100=reports["BB-100-100"].per_domain["adult"],
        dice_bb75=reports["BB-75-75"].per_domain["adult"],
        report_bb100=reports["BB-100-100"],
        report_bb75=reports["BB-75-75"],
        train_seconds=train_seconds,
        total_steps=sum(config.train.steps[p] for p in config.train.phases),
    )


def result_record(result: DeskResult) -> dict:
    """The slim dict that gets fixture-recorded for regression testing."""
    return {
        "dice_bb100": round(result.dice_bb100, 6),
        "dice_bb75": round(result.dice_bb75, 6),
        "total_steps": result.total_steps,
    }
