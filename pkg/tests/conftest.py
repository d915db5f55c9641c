import numpy as np
import pytest

from instances import TOY_BOX, TOY_F, TOY_FREE, TOY_SAMPLES, TOY_X


@pytest.fixture
def toy():
    return {"F": TOY_F, "samples": TOY_SAMPLES, "X": TOY_X, "box": TOY_BOX, "free": TOY_FREE,
            "theta": 0.1, "alpha": 0.5, "c": np.array([1.0])}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
