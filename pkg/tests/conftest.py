import numpy as np
import pytest

from razorquant.rng import SeededRng


@pytest.fixture
def rng():
    return SeededRng(1234)


def random_weights(rng: SeededRng, rows: int, cols: int, scale: float = 1.0) -> np.ndarray:
    return (scale * rng.normal((rows, cols))).astype(np.float32)
