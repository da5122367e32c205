import numpy as np
import pytest

from nnkood.data import generate_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_benchmark():
    """3 ID clusters + 1 OOD cluster in 8-d, 500 train rows, 300 + 300 test rows."""
    return generate_synthetic(3, 1, 100, 8, 6.0, 1.0, seed=0, n_train=500, n_test_id=300, n_test_ood=300)
