import numpy as np
import pytest

from poisonlab import Dataset


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def make_dataset(X, y, w=None):
    return Dataset.from_points(np.asarray(X, dtype=float), y, w)
