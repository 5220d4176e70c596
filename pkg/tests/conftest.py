import numpy as np
import pytest
import torch

from mpseg.volumes import PhantomSpec, generate_phantom, normalize


@pytest.fixture(scope="session", autouse=True)
def single_thread_torch():
    # bitwise-determinism tests assume a fixed reduction order
    torch.set_num_threads(1)


@pytest.fixture()
def phantom_pair():
    """One normalized phantom volume with its mask (default 32x32x16 grid)."""
    volume, mask = generate_phantom(PhantomSpec(seed=11))
    return normalize(volume), mask


def foreground_slice(mask) -> int:
    """Index of the slice with the most tumor pixels."""
    return int(np.argmax(mask.data.sum(axis=(1, 2))))
