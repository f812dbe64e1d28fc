import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_image(rng, h, w):
    return rng.uniform(0.0, 1.0, size=(h, w, 3))
