"""HTTP inference service for interactive prompting.

Volumes are uploaded once (header + payload of the volume file format),
normalized, and cached in memory under a content-hash id. A segmentation
request names a cached volume, a slice, and a user-drawn box; the server runs
the 4-slice window containing that slice through the model and returns the
requested slice's binary mask, run-length encoded. Model weights are
read-only after startup, so requests may run concurrently.
"""

from __future__ import annotations

import hashlib
import io
import json
import threading
import time
from dataclasses import dataclass

import numpy as np
import torch
from fastapi import FastAPI, File, HTTPException, UploadFile
from fastapi.responses import Response
from PIL import Image
from pydantic import BaseModel

from .evaluate import GROUP_SIZE
from .model import SegModel
from .rle import rle_encode
from .sampler import PromptBox, SamplerError
from .volumes import Volume, VolumeError, normalize, volume_from_parts

BINARIZE_THRESHOLD = 0.5


@dataclass
class CachedVolume:
    volume: Volume  # normalized
    header: dict  # as uploaded


class SegmentRequest(BaseModel):
    volume_id: str
    slice_index: int
    box: tuple[int, int, int, int]  # x0, y0, x1, y1


def _volume_content_id(header: dict, payload: bytes) -> str:
    canonical = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(canonical + b"\x00" + payload).hexdigest()[:16]


def segment_window(depth: int, slice_index: int) -> tuple[int, tuple[int, ...]]:
    """Window of 4 slice indices containing ``slice_index``, clamped at the
    volume edges (indices repeat at the last slice of shallow volumes)."""
    start = min(max(slice_index - 1, 0), max(depth - GROUP_SIZE, 0))
    return start, tuple(min(start + i, depth - 1) for i in range(GROUP_SIZE))


def create_app(model: SegModel, ckpt_id: str) -> FastAPI:
    app = FastAPI(title="mpseg inference service")
    cache: dict[str, CachedVolume] = {}
    write_lock = threading.Lock()

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "checkpoint_id": ckpt_id}

    @app.post("/volumes")
    async def upload_volume(
        header: UploadFile = File(...), payload: UploadFile = File(...)
    ):
        header_bytes = await header.read()
        payload_bytes = await payload.read()
        try:
            parsed = json.loads(header_bytes.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise HTTPException(status_code=400, detail=f"header is not valid JSON: {e}")
        if not isinstance(parsed, dict):
            raise HTTPException(status_code=400, detail="header must be a JSON object")
        try:
            volume = volume_from_parts(parsed, payload_bytes)
            normalized = normalize(volume)
        except VolumeError as e:
            raise HTTPException(status_code=400, detail=str(e))
        vid = _volume_content_id(parsed, payload_bytes)
        with write_lock:
            cache.setdefault(vid, CachedVolume(volume=normalized, header=parsed))
        return {"volume_id": vid, "header": parsed}

    def _get_volume(volume_id: str) -> CachedVolume:
        entry = cache.get(volume_id)
        if entry is None:
            raise HTTPException(status_code=404, detail=f"unknown volume {volume_id!r}")
        return entry

    @app.get("/volumes/{volume_id}")
    def volume_metadata(volume_id: str):
        entry = _get_volume(volume_id)
        return {"volume_id": volume_id, "header": entry.header}

    @app.get("/volumes/{volume_id}/slices/{d}")
    def slice_png(volume_id: str, d: int, modality: str = "T1"):
        entry = _get_volume(volume_id)
        volume = entry.volume
        if not 0 <= d < volume.D:
            raise HTTPException(status_code=404, detail=f"slice {d} out of range [0, {volume.D - 1}]")
        if modality.isdigit():
            index = int(modality)
            if index >= volume.M:
                raise HTTPException(status_code=422, detail=f"modality index {index} out of range")
        elif modality in volume.modalities:
            index = volume.modalities.index(modality)
        else:
            raise HTTPException(
                status_code=422,
                detail=f"unknown modality {modality!r}; expected one of {list(volume.modalities)}",
            )
        sl = volume.data[index, d].astype(np.float64)
        lo, hi = float(sl.min()), float(sl.max())
        if hi - lo < 1e-12:
            pixels = np.full(sl.shape, 128, dtype=np.uint8)  # constant slice: mid-gray
        else:
            pixels = np.clip(np.round((sl - lo) / (hi - lo) * 255.0), 0, 255).astype(np.uint8)
        buf = io.BytesIO()
        Image.fromarray(pixels, mode="L").save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.post("/segment")
    def segment(req: SegmentRequest):
        t0 = time.perf_counter()
        entry = _get_volume(req.volume_id)
        volume = entry.volume
        if not 0 <= req.slice_index < volume.D:
            raise HTTPException(
                status_code=422,
                detail=f"slice_index {req.slice_index} out of range [0, {volume.D - 1}]",
            )
        x0, y0, x1, y1 = req.box
        try:
            prompt = PromptBox(req.slice_index, x0, y0, x1, y1)
        except SamplerError as e:
            raise HTTPException(status_code=422, detail=str(e))
        if x1 > volume.W or y1 > volume.H:
            raise HTTPException(
                status_code=422,
                detail=f"box {req.box} exceeds image bounds {volume.W}x{volume.H}",
            )
        if (volume.H, volume.W) != tuple(model.config.image_size):
            raise HTTPException(
                status_code=422,
                detail=f"volume is {volume.H}x{volume.W} but the checkpoint expects "
                f"{model.config.image_size[0]}x{model.config.image_size[1]}",
            )
        start, indices = segment_window(volume.D, req.slice_index)
        x = torch.from_numpy(np.stack([volume.data[:, k] for k in indices]))
        with torch.no_grad():
            probs = torch.sigmoid(model(x, prompt)).numpy()
        position = indices.index(req.slice_index)
        slice_probs = probs[position]
        mask = (slice_probs >= BINARIZE_THRESHOLD).astype(np.uint8)
        latency_ms = (time.perf_counter() - t0) * 1000.0
        return {
            "rle": rle_encode(mask),
            "shape": [volume.H, volume.W],
            "stats": {
                "min": float(slice_probs.min()),
                "max": float(slice_probs.max()),
                "mean": float(slice_probs.mean()),
            },
            "checkpoint_id": ckpt_id,
            "latency_ms": latency_ms,
        }

    return app
