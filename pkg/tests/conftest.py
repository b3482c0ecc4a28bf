import numpy as np
import pytest

from moustache.laws import CycleLawParams
from moustache.regeneration import sample_pool
from moustache.sde import IntegratorConfig


@pytest.fixture(scope="session")
def params_r2():
    return CycleLawParams(2.0)


@pytest.fixture(scope="session")
def cfg_default():
    return IntegratorConfig()


@pytest.fixture(scope="session")
def pool_r2_k30(params_r2, cfg_default):
    """Shared 4000-cycle pool at (r=2, k=30); seeds the cheaper law checks."""
    return sample_pool(params_r2, 30, 4000, cfg_default, seed=1001, workers=2)
