"""Multi-parametric MRI volumes: data model, synthetic phantoms, normalization, file I/O.

A volume is a 4-modality stack of slices indexed ``[modality][depth][height][width]``
so that slice extraction (the training hot path) is a contiguous read. Masks are
``[depth][height][width]``. The on-disk container ("GBTV v1") is a JSON header plus
a raw little-endian payload; round-trips are bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

MODALITIES = ("T1", "T1c", "T2", "T2-FLAIR")
NUM_MODALITIES = 4

DOMAIN_TAGS = ("adult", "meningioma", "pediatric", "ssa")

# (tumor size, tumor contrast, noise) multipliers emulating the four tumor domains.
DOMAIN_PROFILES: Mapping[str, tuple[float, float, float]] = {
    "adult": (1.0, 1.0, 1.0),
    "meningioma": (0.9, 1.3, 0.9),
    "pediatric": (0.7, 0.85, 1.0),
    "ssa": (1.05, 0.7, 1.5),
}

BRAIN_BASE_INTENSITY = 1.0
TUMOR_CONTRAST = 1.2
FOREGROUND_FLOOR = 0.05  # keeps foreground strictly positive after noise

# Sub-regions of a tumor and the modalities that show them. No single modality
# shows the whole tumor; the union does.
DEFAULT_VISIBILITY: Mapping[str, tuple[str, ...]] = {
    "core": ("T1", "T1c"),
    "rim": ("T2", "T2-FLAIR"),
}


class VolumeError(ValueError):
    """Invalid volume construction, normalization, or file content."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Volume:
    """A 4-modality scan. ``data`` has shape (M, D, H, W), float32."""

    data: np.ndarray
    voxel_id: str
    modalities: tuple[str, ...] = MODALITIES

    def __post_init__(self):
        if self.data.ndim != 4:
            raise VolumeError(f"volume data must be 4-D (M, D, H, W), got ndim={self.data.ndim}")
        if self.data.shape[0] != NUM_MODALITIES:
            raise VolumeError(f"M must be {NUM_MODALITIES}, got {self.data.shape[0]}")
        if min(self.data.shape[1:]) < 1:
            raise VolumeError(f"all of D, H, W must be >= 1, got shape {self.data.shape}")
        if len(self.modalities) != NUM_MODALITIES:
            raise VolumeError("expected one name per modality channel")
        if self.data.dtype != np.float32:
            object.__setattr__(self, "data", self.data.astype(np.float32))
        _freeze(self.data)

    @property
    def M(self) -> int:
        return self.data.shape[0]

    @property
    def D(self) -> int:
        return self.data.shape[1]

    @property
    def H(self) -> int:
        return self.data.shape[2]

    @property
    def W(self) -> int:
        return self.data.shape[3]

    def header(self) -> dict:
        return {
            "magic": "GBTV1",
            "H": self.H,
            "W": self.W,
            "D": self.D,
            "M": self.M,
            "dtype": "f32le",
            "modalities": list(self.modalities),
            "voxel_id": self.voxel_id,
        }


@dataclass(frozen=True)
class SegMask:
    """Binary or probability mask of shape (D, H, W) aligned to a Volume."""

    data: np.ndarray
    kind: str = "binary"

    def __post_init__(self):
        if self.data.ndim != 3:
            raise VolumeError(f"mask must be 3-D (D, H, W), got ndim={self.data.ndim}")
        if self.kind == "binary":
            arr = np.ascontiguousarray(self.data, dtype=np.uint8)
            if not np.isin(arr, (0, 1)).all():
                raise VolumeError("binary mask may contain only 0 and 1")
        elif self.kind == "probability":
            arr = np.ascontiguousarray(self.data, dtype=np.float32)
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise VolumeError("probability mask values must lie in [0, 1]")
        else:
            raise VolumeError(f"unknown mask kind {self.kind!r}")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class PhantomSpec:
    """Recipe for a synthetic phantom with planted ellipsoidal tumors.

    ``visibility`` maps tumor sub-regions ("core", "rim") to the modalities in
    which that sub-region is bright; the union must cover both sub-regions so
    every tumor voxel is visible somewhere. ``distractor_count`` plants extra
    lesions that are rendered like tumors but excluded from the mask; drawn
    from the same size distribution, they make the prompt the only cue for
    which lesion is the target.
    """

    shape: tuple[int, int, int] = (32, 32, 16)  # (H, W, D)
    tumor_count: int = 1
    distractor_count: int = 0
    radius_range: tuple[float, float] = (3.0, 6.0)
    visibility: Mapping[str, tuple[str, ...]] = field(
        default_factory=lambda: dict(DEFAULT_VISIBILITY)
    )
    domain_tag: str = "adult"
    noise_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        h, w, d = self.shape
        if min(h, w, d) < 1:
            raise VolumeError(f"grid dims must be >= 1, got {self.shape}")
        if self.tumor_count < 0:
            raise VolumeError("tumor_count must be >= 0")
        if self.distractor_count < 0:
            raise VolumeError("distractor_count must be >= 0")
        lo, hi = self.radius_range
        if lo < 2.0:
            raise VolumeError(f"tumor radius must be >= 2 voxels, got {lo}")
        if hi < lo:
            raise VolumeError("radius_range must be (lo, hi) with lo <= hi")
        if self.domain_tag not in DOMAIN_PROFILES:
            raise VolumeError(
                f"unknown domain_tag {self.domain_tag!r}; expected one of {DOMAIN_TAGS}"
            )
        covered = set()
        for region, mods in self.visibility.items():
            if region not in ("core", "rim"):
                raise VolumeError(f"unknown tumor sub-region {region!r}")
            for m in mods:
                if m not in MODALITIES:
                    raise VolumeError(f"unknown modality {m!r} in visibility profile")
            if mods:
                covered.add(region)
        if covered != {"core", "rim"}:
            raise VolumeError(
                "visibility profile must show every sub-region in at least one modality"
            )
        if self.noise_std < 0:
            raise VolumeError("noise_std must be >= 0")


def _ellipsoid_mask(
    shape_dhw: tuple[int, int, int],
    center_dhw: tuple[float, float, float],
    semi_dhw: tuple[float, float, float],
) -> np.ndarray:
    """Boolean (D, H, W) rasterization of a solid axis-aligned ellipsoid."""
    d_ax, h_ax, w_ax = np.ogrid[: shape_dhw[0], : shape_dhw[1], : shape_dhw[2]]
    cd, ch, cw = center_dhw
    ad, ah, aw = semi_dhw
    q = ((d_ax - cd) / ad) ** 2 + ((h_ax - ch) / ah) ** 2 + ((w_ax - cw) / aw) ** 2
    return q <= 1.0


def _sample_lesion(
    rng: np.random.Generator,
    dims_dhw: tuple[int, int, int],
    size_f: float,
    radius_range: tuple[float, float],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw one ellipsoidal lesion; returns (lesion, core, halo) masks.

    ``halo`` is the lesion grown by one voxel per semi-axis; placement tests
    it against already-placed lesions to keep distractors clearly separated.
    """
    d, h, w = dims_dhw
    lo, hi = radius_range
    semi_h = size_f * rng.uniform(lo, hi)
    semi_w = size_f * rng.uniform(lo, hi)
    semi_d = size_f * rng.uniform(lo, hi) * max(d / max(h, w), 0.35)
    semi_d = max(semi_d, 1.5)
    centers = []
    for dim, semi in ((d, semi_d), (h, semi_h), (w, semi_w)):
        margin = int(np.ceil(semi))
        lo_c, hi_c = margin, dim - 1 - margin
        if lo_c > hi_c:
            raise VolumeError(
                f"tumor with semi-axis {semi:.1f} does not fit inside grid dim {dim}"
            )
        # bias toward the brain center so tumors sit on bright tissue
        mid, span = (lo_c + hi_c) / 2.0, (hi_c - lo_c) / 2.0
        centers.append(mid + rng.uniform(-0.7, 0.7) * span)
    cd, ch, cw = centers
    lesion = _ellipsoid_mask((d, h, w), (cd, ch, cw), (semi_d, semi_h, semi_w))
    core = _ellipsoid_mask((d, h, w), (cd, ch, cw), (0.6 * semi_d, 0.6 * semi_h, 0.6 * semi_w))
    halo = _ellipsoid_mask((d, h, w), (cd, ch, cw), (semi_d + 1, semi_h + 1, semi_w + 1))
    return lesion, core & lesion, halo


def generate_phantom(spec: PhantomSpec) -> tuple[Volume, SegMask]:
    """Build a deterministic synthetic phantom from ``spec``.

    The brain is a bright ellipsoid on a zero background. Each tumor is an
    ellipsoid split into a core and a rim; a sub-region raises the intensity
    only in the modalities its visibility profile names. Distractor lesions
    look identical in the image but stay out of the ground-truth mask, so a
    prompt is required to tell targets from lookalikes. Gaussian noise is
    added inside the brain/tumor foreground; true background stays exactly 0.
    """
    h, w, d = spec.shape
    size_f, contrast_f, noise_f = DOMAIN_PROFILES[spec.domain_tag]
    rng = np.random.default_rng(spec.seed)

    brain = _ellipsoid_mask(
        (d, h, w),
        ((d - 1) / 2.0, (h - 1) / 2.0, (w - 1) / 2.0),
        (max(0.45 * d, 0.6), max(0.45 * h, 0.6), max(0.45 * w, 0.6)),
    )

    gt = np.zeros((d, h, w), dtype=bool)
    lesion_union = np.zeros((d, h, w), dtype=bool)
    core_union = np.zeros((d, h, w), dtype=bool)
    for _ in range(spec.tumor_count):
        tumor, core, _halo = _sample_lesion(rng, (d, h, w), size_f, spec.radius_range)
        gt |= tumor
        lesion_union |= tumor
        core_union |= core
    for _ in range(spec.distractor_count):
        # same size/intensity distribution as targets so only the prompt can
        # disambiguate; re-draw until the halo clears every placed lesion
        for _attempt in range(200):
            lesion, core, halo = _sample_lesion(rng, (d, h, w), size_f, spec.radius_range)
            if not (halo & lesion_union).any():
                lesion_union |= lesion
                core_union |= core
                break

    rim_union = lesion_union & ~core_union
    regions = {"core": core_union, "rim": rim_union}

    data = np.zeros((NUM_MODALITIES, d, h, w), dtype=np.float64)
    contrast = TUMOR_CONTRAST * contrast_f
    for m, name in enumerate(MODALITIES):
        chan = np.where(brain, BRAIN_BASE_INTENSITY, 0.0)
        for region, mods in spec.visibility.items():
            if name in mods:
                chan = np.where(regions[region], BRAIN_BASE_INTENSITY + contrast, chan)
        fg = chan > 0
        if spec.noise_std > 0:
            noise = rng.normal(0.0, spec.noise_std * noise_f, size=chan.shape)
            chan = np.where(fg, chan + noise, 0.0)
        chan = np.where(fg, np.maximum(chan, FOREGROUND_FLOOR), 0.0)
        data[m] = chan

    voxel_id = f"phantom-{spec.domain_tag}-{spec.seed}"
    vol = Volume(data=data.astype(np.float32), voxel_id=voxel_id)
    mask = SegMask(data=gt.astype(np.uint8), kind="binary")
    return vol, mask


def normalize(v: Volume) -> Volume:
    """Z-score each modality over its nonzero (foreground) voxels.

    Background voxels stay exactly 0. Statistics are accumulated in float64;
    the result is float32. Idempotent to within float32 rounding because a
    normalized channel already has zero mean and unit std over its support.
    """
    out = np.array(v.data, dtype=np.float32, copy=True)
    for m in range(v.M):
        chan = out[m]
        fg = chan != 0
        n = int(fg.sum())
        if n < 2:
            raise VolumeError(f"constant modality {v.modalities[m]!r}: too few foreground voxels")
        vals = chan[fg].astype(np.float64)
        mean = vals.mean()
        std = vals.std()
        if std == 0.0:
            raise VolumeError(f"constant modality {v.modalities[m]!r}: zero variance")
        chan[fg] = ((vals - mean) / std).astype(np.float32)
    return replace(v, data=out)


def _stem(path: str | Path) -> Path:
    p = Path(path)
    if p.suffix in (".json", ".bin"):
        p = p.with_suffix("")
    return p


def save_volume(v: Volume, path: str | Path) -> None:
    """Write GBTV v1: ``<stem>.json`` header + ``<stem>.bin`` f32le payload."""
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps(v.header(), separators=(",", ":"))
    stem.with_suffix(".json").write_text(header, encoding="utf-8")
    stem.with_suffix(".bin").write_bytes(
        np.ascontiguousarray(v.data, dtype="<f4").tobytes()
    )


def load_volume(path: str | Path) -> Volume:
    stem = _stem(path)
    header = json.loads(stem.with_suffix(".json").read_text(encoding="utf-8"))
    payload = stem.with_suffix(".bin").read_bytes()
    return volume_from_parts(header, payload)


def volume_from_parts(header: Mapping, payload: bytes) -> Volume:
    """Reassemble a Volume from a parsed GBTV v1 header and raw payload bytes."""
    if header.get("magic") != "GBTV1":
        raise VolumeError(f"bad magic {header.get('magic')!r}, expected 'GBTV1'")
    if header.get("M") != NUM_MODALITIES:
        raise VolumeError(f"M must be {NUM_MODALITIES}, got {header.get('M')}")
    if header.get("dtype") != "f32le":
        raise VolumeError(f"unsupported dtype {header.get('dtype')!r}")
    h, w, d, m = (int(header[k]) for k in ("H", "W", "D", "M"))
    expected = h * w * d * m * 4
    if len(payload) != expected:
        raise VolumeError(
            f"payload size mismatch: expected {expected} bytes, got {len(payload)}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(m, d, h, w)
    return Volume(
        data=data.copy(),
        voxel_id=str(header["voxel_id"]),
        modalities=tuple(header.get("modalities", MODALITIES)),
    )


def save_mask(mask: SegMask, path: str | Path, voxel_id: str) -> None:
    """Write a binary mask in the GBTV v1 layout (M omitted, dtype u8)."""
    if mask.kind != "binary":
        raise VolumeError("only binary masks are persisted")
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    d, h, w = mask.shape
    header = json.dumps(
        {"magic": "GBTV1", "H": h, "W": w, "D": d, "dtype": "u8", "voxel_id": voxel_id},
        separators=(",", ":"),
    )
    stem.with_suffix(".json").write_text(header, encoding="utf-8")
    stem.with_suffix(".bin").write_bytes(
        np.ascontiguousarray(mask.data, dtype=np.uint8).tobytes()
    )


def load_mask(path: str | Path) -> SegMask:
    stem = _stem(path)
    header = json.loads(stem.with_suffix(".json").read_text(encoding="utf-8"))
    if header.get("magic") != "GBTV1":
        raise VolumeError(f"bad magic {header.get('magic')!r}, expected 'GBTV1'")
    if header.get("dtype") != "u8":
        raise VolumeError(f"unsupported mask dtype {header.get('dtype')!r}")
    h, w, d = (int(header[k]) for k in ("H", "W", "D"))
    payload = stem.with_suffix(".bin").read_bytes()
    expected = h * w * d
    if len(payload) != expected:
        raise VolumeError(
            f"payload size mismatch: expected {expected} bytes, got {len(payload)}"
        )
    data = np.frombuffer(payload, dtype=np.uint8).reshape(d, h, w)
    return SegMask(data=data.copy(), kind="binary")


def apply_modality_subset(v: Volume, mode: str | None) -> Volume:
    """Data-level modality ablation.

    ``"replicate:<name>"`` copies one modality into all 4 channels;
    ``"drop:<name>"`` zeroes one channel (the 3-modality case); ``None`` is a
    no-op. The channel count always stays 4.
    """
    if mode is None:
        return v
    kind, _, name = mode.partition(":")
    if name not in v.modalities:
        raise VolumeError(f"unknown modality {name!r} in mode {mode!r}")
    idx = v.modalities.index(name)
    data = np.array(v.data, copy=True)
    if kind == "replicate":
        data[:] = data[idx]
    elif kind == "drop":
        data[idx] = 0.0
    else:
        raise VolumeError(f"unknown modality mode {mode!r}")
    return replace(v, data=data)
