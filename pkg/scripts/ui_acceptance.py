#!/usr/bin/env python3
"""UI acceptance driver: train a toy checkpoint, serve it, run the browser
client's integration tests against it.

Steps: build a small phantom dataset and checkpoint, start the HTTP service
in-process, write a session fixture (volume parts, ground-truth slice RLE,
prompt box), then `npx vitest run tests/integration.test.ts` in frontend/
with MPSEG_SERVER_URL and MPSEG_SESSION_DIR set. Exit code mirrors vitest.

    python3 scripts/ui_acceptance.py [--work DIR] [--port 8731] [--steps N]
"""

import argparse
import json
import os
import shutil
import socket
import subprocess
import tempfile
import threading
import time
from pathlib import Path

import numpy as np
import torch
import uvicorn

REPO = Path(__file__).resolve().parent.parent

from mpseg.cli import checkpoint_id, checkpoint_path, cmd_synth, cmd_train, load_dataset
from mpseg.config import run_config_from_dict
from mpseg.model import load_checkpoint
from mpseg.rle import rle_encode
from mpseg.server import create_app


def session_config(steps: int, work: Path) -> dict:
    return {
        "model": {
            "image_size": [16, 16],
            "patch_size": 4,
            "embed_dim": 32,
            "num_blocks": 2,
            "num_heads": 4,
            "lora_rank": 4,
            "depth_hidden": 16,
        },
        "train": {
            "phases": ["step1", "step2"],
            "steps": {"step1": steps // 4, "step2": steps - steps // 4},
            "lr": {"step1": 3e-3, "step2": 1e-3},
            "train_decoder": True,
        },
        "data": {
            "dir": str(work / "data"),
            "shape": [16, 16, 12],
            "per_domain": 12,
            "train_domains": ["adult"],
            "eval_domains": ["adult"],
            "radius_range": [2.5, 4.0],
            "distractor_count": 0,
            "seed": 7,
        },
    }


def write_session_fixture(work: Path, data_dir: Path) -> Path:
    """Pick a held-out phantom and freeze the scripted gesture for the UI."""
    holdout = load_dataset(data_dir, split="eval", domains=("adult",))
    volume, mask, _domain = holdout[0]
    gt = mask.data
    slice_index = int(np.argmax(gt.reshape(gt.shape[0], -1).sum(axis=1)))
    ys, xs = np.nonzero(gt[slice_index])
    box = [int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1]

    session_dir = work / "session"
    session_dir.mkdir(parents=True, exist_ok=True)
    (session_dir / "header.json").write_text(
        json.dumps(volume.header(), separators=(",", ":")), encoding="utf-8"
    )
    (session_dir / "payload.bin").write_bytes(
        np.ascontiguousarray(volume.data, dtype="<f4").tobytes()
    )
    (session_dir / "session.json").write_text(
        json.dumps(
            {
                "slice_index": slice_index,
                "box": box,
                "gt_runs": rle_encode(gt[slice_index]),
                "height": int(gt.shape[1]),
                "width": int(gt.shape[2]),
            },
            indent=2,
        ),
        encoding="utf-8",
    )
    return session_dir


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--work", default=None, help="working directory (default: a temp dir)")
    ap.add_argument("--port", type=int, default=None, help="server port (default: a free one)")
    ap.add_argument("--steps", type=int, default=400, help="total training steps")
    args = ap.parse_args()
    torch.set_num_threads(1)

    if shutil.which("npx") is None:
        print("FAIL: npx not found; install node to run the UI acceptance loop")
        return 1

    work = Path(args.work or tempfile.mkdtemp(prefix="mpseg-ui-"))
    config = run_config_from_dict(session_config(args.steps, work))
    data_dir = work / "data"
    run_dir = work / "run"
    cmd_synth(config, data_dir)
    cmd_train(config, run_dir, data_dir)

    ck = checkpoint_path(run_dir, config.train.phases[-1])
    model, _ = load_checkpoint(ck)
    session_dir = write_session_fixture(work, data_dir)

    port = args.port or free_port()
    app = create_app(model, checkpoint_id(ck))
    server = uvicorn.Server(
        uvicorn.Config(app, host="127.0.0.1", port=port, log_level="warning")
    )
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 15
    while not server.started:
        if time.monotonic() > deadline:
            print("FAIL: server did not start within 15s")
            return 1
        time.sleep(0.05)

    url = f"http://127.0.0.1:{port}"
    print(f"server up at {url}; session fixture at {session_dir}")
    try:
        proc = subprocess.run(
            ["npx", "vitest", "run", "tests/integration.test.ts"],
            cwd=REPO / "frontend",
            env={
                **os.environ,
                "MPSEG_SERVER_URL": url,
                "MPSEG_SESSION_DIR": str(session_dir),
            },
        )
    finally:
        server.should_exit = True
        thread.join(timeout=10)

    print("PASS: UI loop" if proc.returncode == 0 else "FAIL: UI loop")
    return proc.returncode


if __name__ == "__main__":
    raise SystemExit(main())
