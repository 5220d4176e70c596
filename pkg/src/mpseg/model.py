"""Full segmentation model and its checkpoint container.

The checkpoint is a single file: magic, a JSON header describing config,
metadata and tensor layout, then the raw f32le tensor payloads in name-sorted
order. Writing the same model twice produces identical bytes, which the CLI
relies on for reproducibility checks (no timestamps anywhere).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .encoder import ConfigError, EncoderConfig, ImageEncoder
from .head import MaskDecoder, PromptEncoder
from .sampler import PromptBox, PromptPoint

CHECKPOINT_MAGIC = b"MPCK1\x00"


class CheckpointError(ValueError):
    pass


class SegModel(nn.Module):
    """Encoder + prompt encoder + mask decoder, one logit map per slice."""

    def __init__(self, config: EncoderConfig, adapted: bool = True):
        super().__init__()
        self.config = config
        self.encoder = ImageEncoder(config, adapted=adapted)
        self.prompt_encoder = PromptEncoder(config.embed_dim, config.image_size)
        self.decoder = MaskDecoder(
            config.embed_dim, config.num_heads, config.image_size, config.grid_size
        )

    def forward(self, slices: torch.Tensor, prompt: PromptBox | PromptPoint) -> torch.Tensor:
        features = self.encoder(slices)
        prompt_tokens = self.prompt_encoder(prompt)
        return self.decoder(features, prompt_tokens)


def build_model(config: EncoderConfig, seed: int = 0, adapted: bool = True) -> SegModel:
    """Seed-deterministic construction; same seed, same initial weights."""
    torch.manual_seed(seed)
    return SegModel(config, adapted=adapted)


def save_checkpoint(model: SegModel, path: str | Path, meta: dict | None = None) -> None:
    """Write the container; ``meta`` must be JSON-serializable."""
    state = model.state_dict()
    names = sorted(state)
    tensors = []
    payloads = []
    offset = 0
    for name in names:
        arr = state[name].detach().cpu().to(torch.float32).numpy()
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        tensors.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
                "dtype": "f32le",
            }
        )
        payloads.append(raw)
        offset += len(raw)
    header = {
        "config": dataclasses.asdict(model.config),
        "adapted": model.encoder.adapted,
        "meta": meta or {},
        "tensors": tensors,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for raw in payloads:
            f.write(raw)


def read_checkpoint_header(path: str | Path) -> dict:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad checkpoint magic {magic!r}")
        (length,) = struct.unpack("<I", f.read(4))
        return json.loads(f.read(length).decode("utf-8"))


def load_checkpoint_state(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Header dict plus name -> float32 array for every stored tensor."""
    path = Path(path)
    header = read_checkpoint_header(path)
    base = len(CHECKPOINT_MAGIC) + 4 + len(
        json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    )
    raw = path.read_bytes()
    tensors = {}
    for spec in header["tensors"]:
        start = base + spec["offset"]
        chunk = raw[start : start + spec["nbytes"]]
        if len(chunk) != spec["nbytes"]:
            raise CheckpointError(
                f"truncated payload for {spec['name']}: "
                f"expected {spec['nbytes']} bytes, got {len(chunk)}"
            )
        arr = np.frombuffer(chunk, dtype="<f4").reshape(spec["shape"])
        tensors[spec["name"]] = arr.copy()
    return header, tensors


def config_from_header(header: dict) -> EncoderConfig:
    cfg = dict(header["config"])
    cfg["image_size"] = tuple(cfg["image_size"])
    try:
        return EncoderConfig(**cfg)
    except TypeError as e:
        raise CheckpointError(f"unusable config in checkpoint header: {e}") from e


def load_checkpoint(path: str | Path) -> tuple[SegModel, dict]:
    """Rebuild the model from a container file; returns (model, meta)."""
    header, tensors = load_checkpoint_state(path)
    config = config_from_header(header)
    model = SegModel(config, adapted=bool(header.get("adapted", True)))
    state = {name: torch.from_numpy(arr) for name, arr in tensors.items()}
    missing = sorted(set(model.state_dict()) - set(state))
    extra = sorted(set(state) - set(model.state_dict()))
    if missing or extra:
        raise CheckpointError(f"parameter name mismatch: missing={missing}, extra={extra}")
    model.load_state_dict(state)
    model.eval()
    return model, header.get("meta", {})


def checkpoint_id(path: str | Path) -> str:
    """Content hash identifying a checkpoint file."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def state_dict_hash(model: nn.Module) -> str:
    """Hash of all parameters/buffers; equal iff the weights are bit-equal."""
    h = hashlib.sha256()
    state = model.state_dict()
    for name in sorted(state):
        h.update(name.encode("utf-8"))
        h.update(state[name].detach().cpu().to(torch.float32).numpy().tobytes())
    return h.hexdigest()
