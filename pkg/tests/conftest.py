import numpy as np
import pytest

from texsmooth.toydata import build_toy_dataset, make_texture_bank


@pytest.fixture(scope="session")
def toy_bank():
    return make_texture_bank()


@pytest.fixture(scope="session")
def toy_samples():
    """24 small samples shared by tests that only need plausible data."""
    return build_toy_dataset(24, seed=0, size=64)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
