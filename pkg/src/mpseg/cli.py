"""Command-line entry points: synth, train, eval, serve.

Every command takes a JSON run config plus optional ``--set a.b=c``
overrides, and writes its artifacts under a run directory containing a frozen
copy of the resolved config. Exit codes: 0 ok, 1 user error, 2 internal.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import traceback
from pathlib import Path

from .config import RunConfig, RunConfigError, frozen_config_json, load_run_config
from .encoder import ConfigError
from .evaluate import evaluate_volumes, format_report_table
from .model import (
    CheckpointError,
    build_model,
    checkpoint_id,
    load_checkpoint,
    save_checkpoint,
)
from .sampler import SamplerError
from .training import TrainingError, train
from .volumes import (
    DOMAIN_TAGS,
    PhantomSpec,
    SegMask,
    Volume,
    VolumeError,
    apply_modality_subset,
    generate_phantom,
    load_mask,
    load_volume,
    normalize,
    save_mask,
    save_volume,
)


class UserError(Exception):
    """Anything the operator can fix: bad config, missing files, bad data."""


_USER_FAULTS = (
    UserError,
    RunConfigError,
    ConfigError,
    VolumeError,
    SamplerError,
    TrainingError,
    CheckpointError,
    FileNotFoundError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse usage problems are user errors
        raise UserError(message)


def _phantom_seed(base: int, domain: str, index: int) -> int:
    return base * 1_000_000 + DOMAIN_TAGS.index(domain) * 10_000 + index


def cmd_synth(config: RunConfig, out_dir: str | Path) -> int:
    """Generate the phantom dataset and its manifest."""
    data = config.data
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    domains = [t for t in DOMAIN_TAGS if t in (*data.train_domains, *data.eval_domains)]
    items = []
    for domain in domains:
        n_train = round(data.per_domain * (1.0 - data.holdout_fraction))
        for i in range(data.per_domain):
            spec = PhantomSpec(
                shape=data.shape,
                tumor_count=data.tumor_count,
                distractor_count=data.distractor_count,
                radius_range=data.radius_range,
                domain_tag=domain,
                noise_std=data.noise_std,
                seed=_phantom_seed(data.seed, domain, i),
            )
            volume, mask = generate_phantom(spec)
            vol_stem = f"{domain}-{i:03d}-vol"
            mask_stem = f"{domain}-{i:03d}-mask"
            save_volume(volume, out / vol_stem)
            save_mask(mask, out / mask_stem, voxel_id=volume.voxel_id)
            split = "train" if (domain in data.train_domains and i < n_train) else "eval"
            items.append(
                {
                    "voxel_id": volume.voxel_id,
                    "domain": domain,
                    "volume": vol_stem,
                    "mask": mask_stem,
                    "split": split,
                }
            )
    manifest = {"items": items, "data_config": dataclasses.asdict(data)}
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2), encoding="utf-8"
    )
    print(f"wrote {len(items)} phantom(s) to {out}")
    return 0


def load_dataset(
    data_dir: str | Path,
    split: str | None = None,
    domains: tuple[str, ...] | None = None,
    modality_mode: str | None = None,
) -> list[tuple[Volume, SegMask, str]]:
    """Read manifest entries, normalize, and apply any modality ablation."""
    root = Path(data_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise UserError(f"no manifest.json in {root}; run `mpseg synth` first")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    out = []
    for item in manifest["items"]:
        if split and item["split"] != split:
            continue
        if domains and item["domain"] not in domains:
            continue
        volume = apply_modality_subset(
            normalize(load_volume(root / item["volume"])), modality_mode
        )
        mask = load_mask(root / item["mask"])
        out.append((volume, mask, item["domain"]))
    return out


def _write_frozen_config(config: RunConfig, run_dir: Path) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(frozen_config_json(config), encoding="utf-8")


def checkpoint_path(run_dir: Path, phase: str) -> Path:
    return run_dir / f"checkpoint-{phase}.mpck"


def cmd_train(config: RunConfig, run_dir: str | Path, data_dir: str | Path) -> int:
    run = Path(run_dir)
    _write_frozen_config(config, run)
    dataset = load_dataset(
        data_dir,
        split="train",
        domains=config.data.train_domains,
        modality_mode=config.data.modality_mode,
    )
    if not dataset:
        raise UserError(f"no training volumes found under {data_dir}")
    pairs = [(v, m) for v, m, _ in dataset]

    model = None
    for phase in config.train.phases:
        if phase == "step2" and model is None:
            prior = checkpoint_path(run, "step1")
            if not prior.exists():
                raise UserError(
                    f"missing phase-1 checkpoint {prior}; run step1 first or add it to phases"
                )
            model, _ = load_checkpoint(prior)
        if model is None:
            model = build_model(config.model, seed=config.train.seed)
        tc = config.train.config_for(phase)
        result = train(model, pairs, tc, metrics_path=run / f"metrics-{phase}.ndjson")
        ck = checkpoint_path(run, phase)
        save_checkpoint(
            model,
            ck,
            meta={
                "phase": phase,
                "seed": config.train.seed,
                "prompt_regime": config.train.prompt_regime,
                "final_loss": result.final_loss,
                "skipped_volumes": result.skipped_volumes,
            },
        )
        print(f"{phase}: {tc.steps} step(s), final loss {result.final_loss:.4f} -> {ck}")
    return 0


def cmd_eval(
    config: RunConfig,
    checkpoint: str | Path,
    run_dir: str | Path,
    data_dir: str | Path,
) -> int:
    ck = Path(checkpoint)
    if not ck.exists():
        raise UserError(f"checkpoint not found: {ck}")
    run = Path(run_dir)
    _write_frozen_config(config, run)
    model, _ = load_checkpoint(ck)
    dataset = load_dataset(
        data_dir,
        split="eval",
        domains=config.data.eval_domains,
        modality_mode=config.data.modality_mode,
    )
    if not dataset:
        raise UserError(f"no evaluation volumes found under {data_dir}")
    report = evaluate_volumes(
        model,
        dataset,
        prompt_regime=config.eval.prompt_regime,
        threshold=config.eval.threshold,
        seed=config.eval.seed,
        modality_mode=config.data.modality_mode,
    )
    (run / "report.json").write_text(report.to_json(), encoding="utf-8")
    print(format_report_table(report))
    print(f"report -> {run / 'report.json'}")
    return 0


def cmd_serve(config: RunConfig, checkpoint: str | Path) -> int:
    ck = Path(checkpoint)
    if not ck.exists():
        raise UserError(f"checkpoint not found: {ck}")
    import uvicorn

    from .server import create_app

    model, _ = load_checkpoint(ck)
    app = create_app(model, checkpoint_id(ck))
    uvicorn.run(app, host=config.serve.host, port=config.serve.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mpseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("config", help="path to the JSON run config")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config value, e.g. --set model.lora_rank=8",
        )

    p = sub.add_parser("synth", help="generate the phantom dataset")
    add_common(p)
    p.add_argument("--out", default=None, help="output directory (default: data.dir)")

    p = sub.add_parser("train", help="run the configured training phases")
    add_common(p)
    p.add_argument("--run-dir", default="runs/train", help="artifact directory")
    p.add_argument("--data", default=None, help="dataset directory (default: data.dir)")

    p = sub.add_parser("eval", help="evaluate a checkpoint across domains")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--run-dir", default="runs/eval", help="artifact directory")
    p.add_argument("--data", default=None, help="dataset directory (default: data.dir)")

    p = sub.add_parser("serve", help="serve a checkpoint over HTTP")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = load_run_config(args.config, args.overrides)
        if args.command == "synth":
            return cmd_synth(config, args.out or config.data.dir)
        if args.command == "train":
            return cmd_train(config, args.run_dir, args.data or config.data.dir)
        if args.command == "eval":
            return cmd_eval(config, args.checkpoint, args.run_dir, args.data or config.data.dir)
        if args.command == "serve":
            return cmd_serve(config, args.checkpoint)
        raise UserError(f"unknown command {args.command!r}")
    except SystemExit as e:  # argparse --help
        return int(e.code or 0)
    except _USER_FAULTS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
