"""Two-step fine-tuning: parameter freezing, the optimization loop, accounting.

Phase "step1" trains only the 4-channel patch embedding against an otherwise
frozen model. Phase "step2" additionally unfreezes the low-rank adapters and
the depth-conditioning blocks. "one_step" is the ablation baseline that trains
all of those groups from scratch in a single phase. The mask decoder and
prompt encoder stay frozen in every phase unless explicitly overridden.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import torch
from torch import nn

from .head import bce_loss, soft_dice_loss
from .sampler import (
    PromptBox,
    PromptPoint,
    extract_slice_group,
    group_ground_truth,
    make_box_prompt,
    make_point_prompt,
    select_slices,
    slice_indices_for_base,
)
from .volumes import SegMask, Volume

PHASES = ("step1", "step2", "one_step")
GROUPS = ("patch_embed", "lora", "depth", "encoder_base", "prompt", "decoder")

PROMPT_RETRIES = 20


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    phase: str = "step1"
    batch_size: int = 4
    lr: float = 1e-4
    steps: int = 100
    seed: int = 0
    slice_gap: int = 1
    slice_strategy: str = "delta"
    prompt_regime: str = "BB-100-100"
    train_decoder: bool = False
    grad_clip: float = 1.0
    augment_flips: bool = False
    dice_loss_weight: float = 0.0

    def __post_init__(self):
        if self.phase not in PHASES:
            raise TrainingError(f"unknown phase {self.phase!r}; expected one of {PHASES}")
        if self.batch_size < 1:
            raise TrainingError("batch_size must be >= 1")
        if self.steps < 0:
            raise TrainingError("steps must be >= 0")
        if self.lr <= 0:
            raise TrainingError("lr must be > 0")
        if self.dice_loss_weight < 0:
            raise TrainingError("dice_loss_weight must be >= 0")
        parse_prompt_regime(self.prompt_regime)


@dataclass(frozen=True)
class PromptRegime:
    kind: str  # "point" or "box"
    train_coverage: float | None = None
    test_coverage: float | None = None


def parse_prompt_regime(regime: str) -> PromptRegime:
    """"1p" for a single point, "BB-<train%>-<test%>" for coverage boxes."""
    if regime == "1p":
        return PromptRegime(kind="point")
    parts = regime.split("-")
    if len(parts) == 3 and parts[0] == "BB":
        try:
            p_train, p_test = int(parts[1]), int(parts[2])
        except ValueError:
            raise TrainingError(f"bad prompt regime {regime!r}") from None
        if not (0 < p_train <= 100 and 0 < p_test <= 100):
            raise TrainingError(f"coverage percents must be in (0, 100]: {regime!r}")
        return PromptRegime(kind="box", train_coverage=p_train / 100, test_coverage=p_test / 100)
    raise TrainingError(f"bad prompt regime {regime!r}; expected '1p' or 'BB-<p>-<p>'")


def classify_param(name: str) -> str:
    """Freeze group for one state-dict entry; raises on anything unknown."""
    if name.startswith("encoder.patch_embed."):
        return "patch_embed"
    if name.endswith((".lora_A", ".lora_B")):
        return "lora"
    if ".depth." in name:
        return "depth"
    if name.startswith("encoder."):
        return "encoder_base"
    if name.startswith("prompt_encoder."):
        return "prompt"
    if name.startswith("decoder."):
        return "decoder"
    raise TrainingError(f"cannot assign parameter {name!r} to a freeze group")


@dataclass(frozen=True)
class FreezePlan:
    """Group name -> trainable flag, covering every group."""

    trainable: Mapping[str, bool]

    def __post_init__(self):
        missing = set(GROUPS) - set(self.trainable)
        unknown = set(self.trainable) - set(GROUPS)
        if missing or unknown:
            raise TrainingError(f"freeze plan must cover {GROUPS}: missing={sorted(missing)}, unknown={sorted(unknown)}")

    def is_trainable(self, param_name: str) -> bool:
        return self.trainable[classify_param(param_name)]


def build_freeze_plan(phase: str, train_decoder: bool = False) -> FreezePlan:
    if phase == "step1":
        active = {"patch_embed"}
    elif phase in ("step2", "one_step"):
        active = {"patch_embed", "lora", "depth"}
    else:
        raise TrainingError(f"unknown phase {phase!r}; expected one of {PHASES}")
    if train_decoder:
        active.add("decoder")
    return FreezePlan(trainable={g: g in active for g in GROUPS})


def apply_freeze_plan(model: nn.Module, plan: FreezePlan) -> None:
    for name, param in model.named_parameters():
        param.requires_grad_(plan.is_trainable(name))


def count_trainable_params(
    params: nn.Module | Mapping[str, np.ndarray],
    phase: str | FreezePlan,
    train_decoder: bool = False,
) -> int:
    """Element count over the trainable groups of ``phase``.

    ``params`` may be a model or a name -> tensor mapping (e.g. checkpoint
    tensors). Accepts a FreezePlan directly for nonstandard plans.
    """
    plan = phase if isinstance(phase, FreezePlan) else build_freeze_plan(phase, train_decoder)
    if isinstance(params, nn.Module):
        items = [(n, tuple(p.shape)) for n, p in params.named_parameters()]
    else:
        items = [(n, tuple(np.shape(a))) for n, a in params.items()]
    return sum(int(math.prod(shape)) for name, shape in items if plan.is_trainable(name))


@dataclass
class TrainResult:
    metrics: list[dict]
    skipped_volumes: int
    final_loss: float


def _choose_prompt(
    volume: Volume,
    mask: SegMask,
    regime: PromptRegime,
    config: TrainConfig,
    rng: np.random.Generator,
):
    """Slice indices plus a prompt from the group's center slice.

    Re-draws the group a few times if the center slice has no tumor, then
    falls back to the foreground-richest slice as the base.
    """
    for _ in range(PROMPT_RETRIES):
        indices = select_slices(volume.D, config.slice_gap, rng, config.slice_strategy)
        if mask.data[indices[1]].any():
            break
    else:
        per_slice = mask.data.sum(axis=(1, 2))
        if not per_slice.any():
            raise TrainingError(f"volume {volume.voxel_id!r} has no tumor voxels to prompt from")
        gap = config.slice_gap if config.slice_strategy == "delta" else 1
        base = int(np.clip(int(per_slice.argmax()), gap, volume.D - 1 - 2 * gap))
        indices = slice_indices_for_base(base, gap)
        if not mask.data[indices[1]].any():
            raise TrainingError(
                f"could not place a prompt on volume {volume.voxel_id!r} "
                f"(no foreground on any reachable center slice)"
            )
    center = indices[1]
    if regime.kind == "point":
        prompt = make_point_prompt(mask.data[center], rng, slice_index=center)
    else:
        prompt = make_box_prompt(
            mask.data[center],
            regime.train_coverage,
            rng,
            slice_index=center,
            on_unreachable="closest",
        )
    return indices, prompt


def _flip_sample(
    slices: np.ndarray,
    gt: np.ndarray,
    prompt: PromptBox | PromptPoint,
    flip_y: bool,
    flip_x: bool,
) -> tuple[np.ndarray, np.ndarray, PromptBox | PromptPoint]:
    """Mirror a training sample; the prompt coordinates mirror with it."""
    h, w = slices.shape[-2], slices.shape[-1]
    if flip_y:
        slices = np.flip(slices, axis=-2)
        gt = np.flip(gt, axis=-2)
    if flip_x:
        slices = np.flip(slices, axis=-1)
        gt = np.flip(gt, axis=-1)
    if isinstance(prompt, PromptBox):
        x0, x1 = (w - prompt.x1, w - prompt.x0) if flip_x else (prompt.x0, prompt.x1)
        y0, y1 = (h - prompt.y1, h - prompt.y0) if flip_y else (prompt.y0, prompt.y1)
        prompt = PromptBox(prompt.slice_index, x0, y0, x1, y1, prompt.achieved_coverage)
    else:
        prompt = PromptPoint(
            prompt.slice_index,
            x=w - 1 - prompt.x if flip_x else prompt.x,
            y=h - 1 - prompt.y if flip_y else prompt.y,
        )
    return slices, gt, prompt


def train(
    model: nn.Module,
    dataset: Sequence[tuple[Volume, SegMask]],
    config: TrainConfig,
    metrics_path: str | Path | None = None,
    step_callback: Callable[[nn.Module, int], None] | None = None,
) -> TrainResult:
    """Run one phase of the protocol, mutating ``model`` in place.

    Volumes must be normalized. Volumes too shallow for the slice gap are
    skipped (counted, warned about). Deterministic for a fixed seed and
    thread count. Raises on a non-finite loss instead of continuing.
    """
    if not dataset:
        raise TrainingError("empty dataset")
    min_depth = 3 * config.slice_gap + 1 if config.slice_strategy == "delta" else 4
    usable = [(v, m) for v, m in dataset if v.D >= min_depth]
    skipped = len(dataset) - len(usable)
    if skipped:
        warnings.warn(
            f"skipping {skipped} volume(s) too shallow for slice gap {config.slice_gap}",
            stacklevel=2,
        )
    if not usable:
        raise TrainingError(f"no volume is deep enough for slice gap {config.slice_gap}")

    regime = parse_prompt_regime(config.prompt_regime)
    plan = build_freeze_plan(config.phase, config.train_decoder)
    apply_freeze_plan(model, plan)
    trainable = [p for p in model.parameters() if p.requires_grad]
    if not trainable:
        raise TrainingError(f"freeze plan for {config.phase!r} leaves nothing trainable")
    n_trainable = count_trainable_params(model, plan)

    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)
    optimizer = torch.optim.Adam(trainable, lr=config.lr)

    metrics: list[dict] = []
    log_file = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
    final_loss = float("nan")
    try:
        model.train()
        for step in range(1, config.steps + 1):
            optimizer.zero_grad()
            total = None
            for _ in range(config.batch_size):
                vol, mask = usable[int(rng.integers(0, len(usable)))]
                indices, prompt = _choose_prompt(vol, mask, regime, config, rng)
                group = extract_slice_group(vol, indices)
                slices = group.slices
                target = group_ground_truth(mask, indices)
                if config.augment_flips:
                    flip_y, flip_x = (bool(b) for b in rng.integers(0, 2, size=2))
                    slices, target, prompt = _flip_sample(slices, target, prompt, flip_y, flip_x)
                x = torch.from_numpy(np.ascontiguousarray(slices))
                gt = torch.from_numpy(np.ascontiguousarray(target))
                logits = model(x, prompt)
                loss = bce_loss(gt, logits)
                if config.dice_loss_weight > 0:
                    loss = loss + config.dice_loss_weight * soft_dice_loss(gt, logits)
                total = loss if total is None else total + loss
            batch_loss = total / config.batch_size
            if not torch.isfinite(batch_loss):
                raise TrainingError(
                    f"non-finite loss {float(batch_loss)} at step {step} "
                    f"(phase={config.phase}, lr={config.lr}); aborting"
                )
            batch_loss.backward()
            torch.nn.utils.clip_grad_norm_(trainable, config.grad_clip)
            optimizer.step()
            final_loss = float(batch_loss.detach())
            record = {
                "step": step,
                "phase": config.phase,
                "loss": final_loss,
                "lr": config.lr,
                "trainable_param_count": n_trainable,
            }
            metrics.append(record)
            if log_file:
                log_file.write(json.dumps(record) + "\n")
            if step_callback is not None:
                step_callback(model, step)
                model.train()
    finally:
        if log_file:
            log_file.close()
        model.eval()
    return TrainResult(metrics=metrics, skipped_volumes=skipped, final_loss=final_loss)
