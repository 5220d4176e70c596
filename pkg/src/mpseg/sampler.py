"""Slice-group selection and prompt synthesis.

Training consumes groups of 4 slices at a fixed gap: a base slice b plus
{b-gap, b+gap, b+2*gap}. Prompts (bounding box with controlled tumor coverage,
or a single point) are derived from the group's center slice mask and shared by
all 4 slices. Everything here is a pure function of an explicit RNG.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .volumes import SegMask, Volume

GROUP_SIZE = 4

BOX_COVERAGE_BAND = 0.05
BOX_MAX_ATTEMPTS = 1000


class SamplerError(ValueError):
    pass


@dataclass(frozen=True)
class SliceGroup:
    """The 4 sampled slices: array (G, M, H, W) plus their depth indices."""

    slices: np.ndarray
    depth_indices: tuple[int, int, int, int]
    voxel_id: str

    def __post_init__(self):
        if self.slices.shape[0] != GROUP_SIZE:
            raise SamplerError(f"expected {GROUP_SIZE} slices, got {self.slices.shape[0]}")
        if len(self.depth_indices) != GROUP_SIZE:
            raise SamplerError("need one depth index per slice")
        if any(b <= a for a, b in zip(self.depth_indices, self.depth_indices[1:])):
            raise SamplerError(f"depth indices must be strictly increasing: {self.depth_indices}")
        if self.depth_indices[0] < 0:
            raise SamplerError(f"negative depth index: {self.depth_indices}")


@dataclass(frozen=True)
class PromptBox:
    """Axis-aligned box on one slice, half-open pixel coords.

    ``achieved_coverage`` is the fraction of the slice's tumor pixels inside
    the box when derived from a ground-truth mask; None for user-drawn boxes.
    """

    slice_index: int
    x0: int
    y0: int
    x1: int
    y1: int
    achieved_coverage: Optional[float] = None

    def __post_init__(self):
        if not (0 <= self.x0 < self.x1 and 0 <= self.y0 < self.y1):
            raise SamplerError(
                f"box must have positive extent with nonnegative corners: "
                f"({self.x0},{self.y0},{self.x1},{self.y1})"
            )
        if self.achieved_coverage is not None and not 0.0 <= self.achieved_coverage <= 1.0:
            raise SamplerError(f"coverage outside [0,1]: {self.achieved_coverage}")

    @classmethod
    def from_corners(
        cls,
        slice_index: int,
        xa: int,
        ya: int,
        xb: int,
        yb: int,
        achieved_coverage: Optional[float] = None,
    ) -> "PromptBox":
        """Canonicalize an arbitrary corner order to (x0<x1, y0<y1)."""
        return cls(
            slice_index,
            min(xa, xb),
            min(ya, yb),
            max(xa, xb),
            max(ya, yb),
            achieved_coverage,
        )


@dataclass(frozen=True)
class PromptPoint:
    slice_index: int
    x: int
    y: int


def slice_indices_for_base(base: int, gap: int) -> tuple[int, int, int, int]:
    """The group {base-gap, base, base+gap, base+2*gap}, ascending."""
    return (base - gap, base, base + gap, base + 2 * gap)


def select_slices(
    depth: int,
    gap: int,
    rng: np.random.Generator,
    strategy: str = "delta",
) -> tuple[int, int, int, int]:
    """Draw the 4 depth indices for one training sample.

    "delta": base b uniform on [gap, depth-1-2*gap], indices gap-spaced around
    it; the clamped range keeps every index in bounds. "random": 4 distinct
    uniform indices (the ablation baseline).
    """
    if strategy == "random":
        if depth < GROUP_SIZE:
            raise SamplerError(f"volume too shallow for 4 distinct slices: D={depth}")
        picks = rng.choice(depth, size=GROUP_SIZE, replace=False)
        return tuple(int(i) for i in np.sort(picks))
    if strategy != "delta":
        raise SamplerError(f"unknown slice strategy {strategy!r}")
    if gap < 1:
        raise SamplerError(f"slice gap must be >= 1, got {gap}")
    if depth < 3 * gap + 1:
        raise SamplerError(f"volume too shallow for delta={gap}: D={depth} < {3 * gap + 1}")
    base = int(rng.integers(gap, depth - 2 * gap))
    return slice_indices_for_base(base, gap)


def extract_slice_group(volume: Volume, indices: tuple[int, int, int, int]) -> SliceGroup:
    if max(indices) >= volume.D:
        raise SamplerError(f"depth index {max(indices)} out of range for D={volume.D}")
    slices = np.stack([volume.data[:, d] for d in indices])  # (G, M, H, W)
    return SliceGroup(slices=slices, depth_indices=tuple(indices), voxel_id=volume.voxel_id)


def _coverage(mask_slice: np.ndarray, x0: int, y0: int, x1: int, y1: int, total: int) -> float:
    return float(mask_slice[y0:y1, x0:x1].sum()) / total


def make_box_prompt(
    mask_slice: np.ndarray,
    target_coverage: float,
    rng: np.random.Generator,
    slice_index: int = 0,
    on_unreachable: str = "raise",
) -> PromptBox:
    """Box covering ~``target_coverage`` of the slice's tumor pixels.

    Starts from the tight bounding box (coverage 1.0 for target 1.0); for a
    partial target, contracts edges by random inward offsets and accepts the
    first candidate within +/-0.05 of the target. Tiny cross-sections can
    make the band unreachable (coverage is quantized in units of 1/|tumor|);
    after 1000 failed attempts the default is to raise, but callers that must
    keep going can pass ``on_unreachable="closest"`` to get the candidate
    whose coverage came nearest the target.
    """
    if on_unreachable not in ("raise", "closest"):
        raise SamplerError(f"on_unreachable must be 'raise' or 'closest', got {on_unreachable!r}")
    mask_slice = np.asarray(mask_slice)
    total = int(np.count_nonzero(mask_slice))
    if total == 0:
        raise SamplerError("no foreground for prompt")
    if not 0.0 < target_coverage <= 1.0:
        raise SamplerError(f"target coverage must be in (0, 1], got {target_coverage}")
    ys, xs = np.nonzero(mask_slice)
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    if target_coverage >= 1.0:
        return PromptBox(slice_index, x0, y0, x1, y1, achieved_coverage=1.0)

    w, h = x1 - x0, y1 - y0
    max_dx = max(1, int(round(w * (1.0 - target_coverage) * 1.5)))
    max_dy = max(1, int(round(h * (1.0 - target_coverage) * 1.5)))
    lo, hi = target_coverage - BOX_COVERAGE_BAND, target_coverage + BOX_COVERAGE_BAND
    best: PromptBox | None = None
    best_gap = float("inf")
    for _ in range(BOX_MAX_ATTEMPTS):
        cx0 = x0 + int(rng.integers(0, max_dx + 1))
        cx1 = x1 - int(rng.integers(0, max_dx + 1))
        cy0 = y0 + int(rng.integers(0, max_dy + 1))
        cy1 = y1 - int(rng.integers(0, max_dy + 1))
        if cx0 >= cx1 or cy0 >= cy1:
            continue
        cov = _coverage(mask_slice, cx0, cy0, cx1, cy1, total)
        if lo <= cov <= hi:
            return PromptBox(slice_index, cx0, cy0, cx1, cy1, achieved_coverage=cov)
        if cov > 0.0 and abs(cov - target_coverage) < best_gap:
            best_gap = abs(cov - target_coverage)
            best = PromptBox(slice_index, cx0, cy0, cx1, cy1, achieved_coverage=cov)
    if on_unreachable == "closest" and best is not None:
        return best
    raise SamplerError(
        f"no box with coverage in [{lo:.2f}, {hi:.2f}] found in {BOX_MAX_ATTEMPTS} attempts"
    )


def make_point_prompt(
    mask_slice: np.ndarray,
    rng: np.random.Generator,
    slice_index: int = 0,
) -> PromptPoint:
    """Uniform draw over the slice's tumor pixels."""
    mask_slice = np.asarray(mask_slice)
    ys, xs = np.nonzero(mask_slice)
    if len(ys) == 0:
        raise SamplerError("no foreground for prompt")
    k = int(rng.integers(0, len(ys)))
    return PromptPoint(slice_index, x=int(xs[k]), y=int(ys[k]))


def group_ground_truth(mask: SegMask, indices: tuple[int, int, int, int]) -> np.ndarray:
    """Ground-truth slices for a group, shape (G, H, W) uint8."""
    return np.stack([mask.data[d] for d in indices])
