"""Dice metrics, full-volume inference, and cross-domain reporting."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
import torch

from .sampler import GROUP_SIZE, PromptBox, PromptPoint, make_box_prompt, make_point_prompt
from .training import parse_prompt_regime
from .volumes import DOMAIN_TAGS, SegMask, Volume

SEEN_DOMAIN = DOMAIN_TAGS[0]
UNSEEN_DOMAINS = DOMAIN_TAGS[1:]


class EvalError(ValueError):
    pass


def _as_binary(arr, label: str) -> np.ndarray:
    arr = np.asarray(arr)
    if not np.isin(arr, (0, 1)).all():
        raise EvalError(f"{label} must be binary (0/1)")
    return arr.astype(bool)


def dice(y, p) -> float:
    """2|Y n P| / (|Y| + |P|); two empty masks count as a perfect match."""
    y = _as_binary(y, "ground truth")
    p = _as_binary(p, "prediction")
    if y.shape != p.shape:
        raise EvalError(f"shape mismatch: {y.shape} vs {p.shape}")
    denom = int(y.sum()) + int(p.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(y, p).sum()) / denom


def mean_unseen_dice(ds2: float, ds3: float, ds4: float) -> float:
    """Mean Dice over the three held-out domains.

    Accepts either fractions in [0, 1] or percents in [0, 100], but not a
    mixture of the two.
    """
    values = (ds2, ds3, ds4)
    for v in values:
        if not 0.0 <= v <= 100.0:
            raise EvalError(f"Dice value {v} outside [0, 100]")
    if any(v > 1.0 for v in values) and any(v < 1.0 for v in values):
        raise EvalError(f"mixed fraction/percent scales in {values}")
    return (ds2 + ds3 + ds4) / 3


PromptSource = Callable[[tuple[int, int, int, int]], "PromptBox | PromptPoint"]


def _fallback_box(shape_dhw: tuple[int, int, int], slice_index: int) -> PromptBox:
    # centered box over the middle half of the image; used when a window has
    # no ground-truth foreground to derive a prompt from
    _, h, w = shape_dhw
    x0, y0 = w // 4, h // 4
    return PromptBox(slice_index, x0, y0, max(x0 + 1, w - w // 4), max(y0 + 1, h - h // 4))


def gt_box_prompt_source(mask: SegMask, coverage: float, rng: np.random.Generator) -> PromptSource:
    """Boxes with the given tumor coverage, drawn from the ground truth.

    Scans the window's slices center-first for one with foreground; a window
    with no foreground at all gets an uninformative centered box.
    """

    def source(indices: tuple[int, int, int, int]):
        for k in (1, 2, 0, 3):
            sl = mask.data[indices[k]]
            if sl.any():
                # "closest": tiny cross-sections whose quantized coverages
                # skip the accept band still get a usable box
                return make_box_prompt(
                    sl, coverage, rng, slice_index=int(indices[k]), on_unreachable="closest"
                )
        return _fallback_box(mask.shape, int(indices[1]))

    return source


def gt_point_prompt_source(mask: SegMask, rng: np.random.Generator) -> PromptSource:
    def source(indices: tuple[int, int, int, int]):
        for k in (1, 2, 0, 3):
            sl = mask.data[indices[k]]
            if sl.any():
                return make_point_prompt(sl, rng, slice_index=int(indices[k]))
        _, h, w = mask.shape
        return PromptPoint(int(indices[1]), x=w // 2, y=h // 2)

    return source


def fixed_prompt_source(prompt: PromptBox | PromptPoint) -> PromptSource:
    return lambda indices: prompt


def inference_windows(depth: int) -> list[tuple[int, int, int, int]]:
    """Non-overlapping 4-slice windows; the tail repeats the last slice."""
    if depth < 1:
        raise EvalError(f"depth must be >= 1, got {depth}")
    return [
        tuple(min(s + i, depth - 1) for i in range(GROUP_SIZE))
        for s in range(0, depth, GROUP_SIZE)
    ]


def infer_volume(model, volume: Volume, prompt_source: PromptSource) -> SegMask:
    """Probability mask over the whole volume, window by window.

    Output depth always equals the input depth; predictions for padded
    (repeated) slices in the final window are discarded.
    """
    d, h, w = volume.D, volume.H, volume.W
    probs = np.zeros((d, h, w), dtype=np.float32)
    model.eval()
    with torch.no_grad():
        for s0, indices in zip(range(0, d, GROUP_SIZE), inference_windows(d)):
            prompt = prompt_source(indices)
            x = torch.from_numpy(np.stack([volume.data[:, k] for k in indices]))
            p = torch.sigmoid(model(x, prompt)).numpy()
            for i in range(GROUP_SIZE):
                if s0 + i < d:
                    probs[s0 + i] = p[i]
    return SegMask(data=probs, kind="probability")


def binarize(mask: SegMask, threshold: float = 0.5) -> SegMask:
    """Probability mask -> binary mask; ties at the threshold go to 1."""
    if mask.kind != "probability":
        raise EvalError(f"binarize expects a probability mask, got {mask.kind!r}")
    if not 0.0 <= threshold <= 1.0:
        raise EvalError(f"threshold must be in [0, 1], got {threshold}")
    return SegMask(data=(mask.data >= threshold).astype(np.uint8), kind="binary")


@dataclass(frozen=True)
class DiceReport:
    """Cross-domain evaluation summary.

    ``per_domain`` maps domain tag to its mean Dice (fractions in [0, 1]);
    ``ds234`` averages the three held-out domains and must equal their
    recomputed mean exactly. ``per_volume`` keeps the raw breakdown.
    """

    per_domain: Mapping[str, float]
    ds234: Optional[float]
    per_volume: tuple[dict, ...]
    prompt_regime: str
    threshold: float
    modality_mode: Optional[str] = None
    notes: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for domain, value in self.per_domain.items():
            if not 0.0 <= value <= 1.0:
                raise EvalError(f"domain {domain!r} Dice {value} outside [0, 1]")
        if all(t in self.per_domain for t in UNSEEN_DOMAINS):
            expected = mean_unseen_dice(*(self.per_domain[t] for t in UNSEEN_DOMAINS))
            if self.ds234 != expected:
                raise EvalError(f"ds234 {self.ds234} != recomputed {expected}")
        parse_prompt_regime(self.prompt_regime)

    def to_json(self) -> str:
        return json.dumps(
            {
                "per_domain": dict(self.per_domain),
                "ds234": self.ds234,
                "per_volume": list(self.per_volume),
                "prompt_regime": self.prompt_regime,
                "threshold": self.threshold,
                "modality_mode": self.modality_mode,
                "notes": dict(self.notes),
            },
            sort_keys=True,
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "DiceReport":
        obj = json.loads(text)
        return cls(
            per_domain=obj["per_domain"],
            ds234=obj["ds234"],
            per_volume=tuple(obj["per_volume"]),
            prompt_regime=obj["prompt_regime"],
            threshold=obj["threshold"],
            modality_mode=obj.get("modality_mode"),
            notes=obj.get("notes", {}),
        )


def make_report(
    per_volume: Sequence[dict],
    prompt_regime: str,
    threshold: float,
    modality_mode: str | None = None,
) -> DiceReport:
    """Aggregate per-volume rows {voxel_id, domain, dice} into a DiceReport."""
    by_domain: dict[str, list[float]] = {}
    for row in per_volume:
        by_domain.setdefault(row["domain"], []).append(float(row["dice"]))
    per_domain = {d: float(np.mean(v)) for d, v in sorted(by_domain.items())}
    ds234 = None
    if all(t in per_domain for t in UNSEEN_DOMAINS):
        ds234 = mean_unseen_dice(*(per_domain[t] for t in UNSEEN_DOMAINS))
    return DiceReport(
        per_domain=per_domain,
        ds234=ds234,
        per_volume=tuple(dict(r) for r in per_volume),
        prompt_regime=prompt_regime,
        threshold=threshold,
        modality_mode=modality_mode,
    )


def evaluate_volumes(
    model,
    dataset: Sequence[tuple[Volume, SegMask, str]],
    prompt_regime: str = "BB-100-100",
    threshold: float = 0.5,
    seed: int = 0,
    modality_mode: str | None = None,
) -> DiceReport:
    """Dice of full-volume inference over (volume, mask, domain) triples.

    Volumes must already be normalized (and modality-transformed if the run
    uses an ablation); prompts are regenerated per window from the ground
    truth at the regime's test coverage.
    """
    regime = parse_prompt_regime(prompt_regime)
    rng = np.random.default_rng(seed)
    rows = []
    for volume, mask, domain in dataset:
        if regime.kind == "point":
            source = gt_point_prompt_source(mask, rng)
        else:
            source = gt_box_prompt_source(mask, regime.test_coverage, rng)
        pred = binarize(infer_volume(model, volume, source), threshold)
        rows.append(
            {
                "voxel_id": volume.voxel_id,
                "domain": domain,
                "dice": dice(mask.data, pred.data),
            }
        )
    return make_report(rows, prompt_regime, threshold, modality_mode)


def format_report_table(report: DiceReport) -> str:
    """Fixed-width table: per-domain mean and spread, then the unseen mean."""
    counts: dict[str, list[float]] = {}
    for row in report.per_volume:
        counts.setdefault(row["domain"], []).append(float(row["dice"]))
    lines = [f"{'domain':<12} {'n':>3} {'dice':>7} {'std':>7}"]
    for domain in sorted(report.per_domain):
        vals = counts.get(domain, [])
        std = float(np.std(vals)) if vals else 0.0
        lines.append(
            f"{domain:<12} {len(vals):>3} {report.per_domain[domain]:>7.4f} {std:>7.4f}"
        )
    if report.ds234 is not None:
        lines.append(f"{'unseen mean':<12} {'':>3} {report.ds234:>7.4f}")
    return "\n".join(lines)
