import numpy as np
import pytest
from hypothesis import settings

from spdgauss.manifold import expm, sym
from spdgauss.normalization import build_table

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def random_spd(rng, m, spread=1.0):
    """SPD matrix exp(S) with S a symmetric Gaussian matrix scaled by ``spread``."""
    return expm(sym(spread * rng.standard_normal((m, m))))


def random_invertible(rng, m):
    """Random matrix with condition number kept moderate."""
    u, _ = np.linalg.qr(rng.standard_normal((m, m)))
    v, _ = np.linalg.qr(rng.standard_normal((m, m)))
    return u @ np.diag(np.exp(rng.uniform(-1.0, 1.0, m))) @ v


@pytest.fixture(scope="session")
def table1():
    return build_table(1)


@pytest.fixture(scope="session")
def table2():
    return build_table(2)


@pytest.fixture(scope="session")
def table3():
    return build_table(3, mc_samples=200_000, seed=11)
