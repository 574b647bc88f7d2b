import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240801)


def random_spd(rng, n, jitter=0.5):
    """Random dense symmetric positive-definite matrix."""
    A = rng.normal(size=(n, n))
    M = A @ A.T / n
    M[np.diag_indices(n)] += jitter
    return 0.5 * (M + M.T)


def random_dataset(rng, n=60, p=4, noise=0.2):
    from spatrf.data import LocatedDataset

    coords = rng.uniform(0.0, 1.0, size=(n, 2))
    X = rng.normal(size=(n, p))
    Z = np.sin(2.0 * X[:, 0]) + 0.5 * X[:, 1] ** 2 + noise * rng.normal(size=n)
    return LocatedDataset(ids=[str(i) for i in range(n)], coords=coords, X=X, Z=Z)
