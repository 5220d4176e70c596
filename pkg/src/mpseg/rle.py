"""Run-length coding for binary slice masks.

The wire format is a JSON-friendly list of run lengths over the row-major
flattened mask, alternating values starting with the run of zeros (so a mask
whose first pixel is 1 starts with an explicit 0-length run). The lengths
always sum to height*width.
"""

from __future__ import annotations

import numpy as np


class RleError(ValueError):
    pass


def rle_encode(mask) -> list[int]:
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise RleError(f"expected a 2-D slice mask, got ndim={arr.ndim}")
    flat = arr.ravel()
    if not np.isin(flat, (0, 1)).all():
        raise RleError("mask must be binary (0/1)")
    flat = flat.astype(np.uint8)
    changes = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    lengths = np.diff(bounds).tolist()
    if int(flat[0]) == 1:
        lengths.insert(0, 0)
    return [int(n) for n in lengths]


def rle_decode(runs, height: int, width: int) -> np.ndarray:
    runs = [int(n) for n in runs]
    if any(n < 0 for n in runs):
        raise RleError("run lengths must be nonnegative")
    if sum(runs) != height * width:
        raise RleError(f"run lengths sum to {sum(runs)}, expected {height * width}")
    values = np.resize(np.array([0, 1], dtype=np.uint8), len(runs))
    return np.repeat(values, runs).reshape(height, width)
