import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from avgzsl.services.data import gen_synthetic  # noqa: E402
from avgzsl.services.model import ArchitectureSpec, init_params  # noqa: E402

TINY_DIMS = (12, 10, 6)


@pytest.fixture
def tiny_arch():
    return ArchitectureSpec.for_features(*TINY_DIMS, embed_dim=4, hidden_audio=5, hidden_video=5, hidden_decoder=4)


@pytest.fixture
def tiny_params(tiny_arch):
    return init_params(tiny_arch, 3)


@pytest.fixture
def tiny_dataset():
    return gen_synthetic(4, 2, 10, dims=TINY_DIMS, noise_sigma=0.1, seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

