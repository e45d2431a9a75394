import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_raster(rng, h=None, w=None, rgb=True):
    h = h or int(rng.integers(16, 96))
    w = w or int(rng.integers(16, 96))
    shape = (h, w, 3) if rgb else (h, w)
    return rng.integers(0, 256, shape, dtype=np.uint8)
