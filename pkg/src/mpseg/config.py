"""Run configuration: one JSON document driving synth/train/eval/serve.

Parsing is strict: unknown keys anywhere in the document are rejected with
their full path, so typos fail loudly instead of silently using defaults.
Values can be overridden from the command line with ``--set a.b=c``.
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

from .encoder import EncoderConfig
from .training import PHASES, TrainConfig, parse_prompt_regime
from .volumes import DOMAIN_TAGS


class RunConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    """Phantom dataset recipe plus where it lives on disk."""

    dir: str = "data"
    shape: tuple[int, int, int] = (32, 32, 16)  # (H, W, D)
    per_domain: int = 10
    train_domains: tuple[str, ...] = ("adult",)
    eval_domains: tuple[str, ...] = DOMAIN_TAGS
    tumor_count: int = 1
    distractor_count: int = 0
    radius_range: tuple[float, float] = (3.0, 6.0)
    noise_std: float = 0.05
    seed: int = 0
    holdout_fraction: float = 0.25
    modality_mode: Optional[str] = None

    def __post_init__(self):
        if self.per_domain < 0:
            raise RunConfigError("per_domain must be >= 0")
        if self.distractor_count < 0:
            raise RunConfigError("distractor_count must be >= 0")
        for tag in (*self.train_domains, *self.eval_domains):
            if tag not in DOMAIN_TAGS:
                raise RunConfigError(f"unknown domain {tag!r}; expected one of {DOMAIN_TAGS}")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise RunConfigError("holdout_fraction must be in [0, 1)")


@dataclass(frozen=True)
class TrainPlan:
    """Which phases to run and the shared optimization knobs.

    ``steps`` maps each phase to its step budget; ``lr`` is a single rate or
    a per-phase map.
    """

    phases: tuple[str, ...] = ("step1", "step2")
    steps: Mapping[str, int] = field(
        default_factory=lambda: {"step1": 500, "step2": 1500}
    )
    batch_size: int = 4
    lr: float | Mapping[str, float] = 1e-4
    seed: int = 0
    slice_gap: int = 1
    slice_strategy: str = "delta"
    prompt_regime: str = "BB-100-100"
    train_decoder: bool = False
    grad_clip: float = 1.0
    augment_flips: bool = False
    dice_loss_weight: float = 0.0

    def __post_init__(self):
        if not self.phases:
            raise RunConfigError("phases must be nonempty")
        for phase in self.phases:
            if phase not in PHASES:
                raise RunConfigError(f"unknown phase {phase!r}; expected one of {PHASES}")
            if phase not in self.steps:
                raise RunConfigError(f"no step budget for phase {phase!r}")
        if len(set(self.phases)) != len(self.phases):
            raise RunConfigError("phases must be distinct")
        if "one_step" in self.phases and len(self.phases) > 1:
            raise RunConfigError("one_step is a standalone baseline, not a phase in a sequence")
        parse_prompt_regime(self.prompt_regime)

    def lr_for(self, phase: str) -> float:
        if isinstance(self.lr, Mapping):
            if phase not in self.lr:
                raise RunConfigError(f"no learning rate for phase {phase!r}")
            return float(self.lr[phase])
        return float(self.lr)

    def config_for(self, phase: str) -> TrainConfig:
        return TrainConfig(
            phase=phase,
            batch_size=self.batch_size,
            lr=self.lr_for(phase),
            steps=int(self.steps[phase]),
            seed=self.seed,
            slice_gap=self.slice_gap,
            slice_strategy=self.slice_strategy,
            prompt_regime=self.prompt_regime,
            train_decoder=self.train_decoder,
            grad_clip=self.grad_clip,
            augment_flips=self.augment_flips,
            dice_loss_weight=self.dice_loss_weight,
        )


@dataclass(frozen=True)
class EvalConfig:
    prompt_regime: str = "BB-100-100"
    threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        parse_prompt_regime(self.prompt_regime)
        if not 0.0 <= self.threshold <= 1.0:
            raise RunConfigError(f"threshold must be in [0, 1], got {self.threshold}")


@dataclass(frozen=True)
class ServeConfig:
    host: str = "127.0.0.1"
    port: int = 8765

    def __post_init__(self):
        if not 0 < self.port < 65536:
            raise RunConfigError(f"port out of range: {self.port}")


@dataclass(frozen=True)
class RunConfig:
    model: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainPlan = field(default_factory=TrainPlan)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    serve: ServeConfig = field(default_factory=ServeConfig)


def _coerce(value, annotation, path: str):
    origin = typing.get_origin(annotation)
    if origin is typing.Union or origin is types.UnionType:
        # Optional[X] and float-or-map unions: try the non-None members
        members = [a for a in typing.get_args(annotation) if a is not type(None)]
        if value is None:
            return None
        if len(members) == 1:
            return _coerce(value, members[0], path)
        return value
    if dataclasses.is_dataclass(annotation):
        return _from_dict(annotation, value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise RunConfigError(f"{path}: expected a list, got {type(value).__name__}")
        args = typing.get_args(annotation)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value))
        if len(args) != len(value):
            raise RunConfigError(f"{path}: expected {len(args)} entries, got {len(value)}")
        return tuple(_coerce(v, a, f"{path}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if annotation is float and isinstance(value, int):
        return float(value)
    return value


def _from_dict(cls, obj, path: str = ""):
    if not isinstance(obj, dict):
        raise RunConfigError(f"{path or 'config'}: expected an object, got {type(obj).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(obj) - names)
    if unknown:
        where = f"{path}." if path else ""
        raise RunConfigError(f"unknown config key(s): {', '.join(where + k for k in unknown)}")
    kwargs = {}
    for key, value in obj.items():
        kwargs[key] = _coerce(value, hints[key], f"{path}.{key}" if path else key)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        if isinstance(e, RunConfigError):
            raise
        raise RunConfigError(f"{path or 'config'}: {e}") from e


def run_config_from_dict(obj: dict) -> RunConfig:
    return _from_dict(RunConfig, obj)


def apply_override(raw: dict, spec: str) -> None:
    """Apply one ``a.b.c=value`` override in place; value parsed as JSON when
    possible, kept as a string otherwise."""
    key, sep, text = spec.partition("=")
    if not sep or not key:
        raise RunConfigError(f"override must look like a.b=value, got {spec!r}")
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    parts = key.split(".")
    node = raw
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise RunConfigError(f"override path {key!r} crosses a non-object value")
    node[parts[-1]] = value


def load_run_config(path: str | Path, overrides: list[str] | None = None) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise RunConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise RunConfigError(f"config is not valid JSON: {e}") from e
    for spec in overrides or []:
        apply_override(raw, spec)
    return run_config_from_dict(raw)


def frozen_config_json(config: RunConfig) -> str:
    """Canonical JSON of the resolved config, written into every run dir."""
    return json.dumps(dataclasses.asdict(config), sort_keys=True, indent=2)
