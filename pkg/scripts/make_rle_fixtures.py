#!/usr/bin/env python3
"""Regenerate the shared run-length fixture corpus.

The corpus is consumed by both the Python suite (tests/test_rle.py) and the
browser client's vitest suite, so the two codecs are pinned to identical
bytes. Deterministic; rerunning must not change the file.
"""

import json
from pathlib import Path

import numpy as np

from mpseg.rle import rle_encode

OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "rle_cases.json"


def as_case(mask: np.ndarray) -> dict:
    mask = mask.astype(np.uint8)
    return {
        "height": int(mask.shape[0]),
        "width": int(mask.shape[1]),
        "pixels": "".join(str(int(v)) for v in mask.ravel()),
        "runs": rle_encode(mask),
    }


def main() -> None:
    cases = []
    # edge cases by hand
    cases.append(as_case(np.zeros((1, 1))))
    cases.append(as_case(np.ones((1, 1))))
    cases.append(as_case(np.zeros((3, 5))))
    cases.append(as_case(np.ones((2, 4))))
    cases.append(as_case(np.array([[0, 0, 1, 1], [1, 0, 0, 0]])))
    cases.append(as_case(np.array([[1, 0], [0, 1]])))  # alternating singles
    checker = np.indices((6, 7)).sum(axis=0) % 2
    cases.append(as_case(checker))
    # seeded random masks at the sizes the service actually produces
    rng = np.random.default_rng(20240817)
    for shape, density in [((8, 8), 0.3), ((16, 16), 0.5), ((32, 32), 0.2), ((32, 32), 0.8), ((5, 9), 0.5)]:
        cases.append(as_case((rng.random(shape) < density).astype(np.uint8)))
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(cases, indent=2) + "\n")
    print(f"wrote {len(cases)} cases to {OUT}")


if __name__ == "__main__":
    main()
