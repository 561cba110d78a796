import numpy as np
import pytest

from aspus.survdata import SurvivalDataset


def random_dataset(rng, n=20, p=4, k=2, ties=True, censor=0.4, dosage="discrete"):
    if dosage == "discrete":
        geno = rng.integers(0, 3, size=(n, p)).astype(float)
    else:
        geno = rng.uniform(0, 2, size=(n, p))
    covar = rng.normal(size=(n, k))
    time = rng.exponential(size=n) + 0.05
    if ties:
        time = np.round(time, 1) + 0.1
    status = (rng.uniform(size=n) > censor).astype(float)
    if status.sum() == 0:
        status[0] = 1.0
    return SurvivalDataset(
        [f"s{i}" for i in range(n)], geno, covar, time, status,
        [f"rs{j}" for j in range(p)], [f"c{j}" for j in range(k)],
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def make_dataset():
    return random_dataset
