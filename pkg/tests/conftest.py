import numpy as np
import pytest
import torch

from videodehaze.frames import Frame

# Single-threaded keeps CPU runs reproducible and avoids oversubscription.
torch.set_num_threads(1)


def random_frame(rng: np.random.Generator, height: int = 16, width: int = 16,
                 dtype=np.float32) -> Frame:
    return Frame(rng.random((height, width, 3)).astype(dtype))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
