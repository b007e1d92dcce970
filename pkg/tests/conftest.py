import numpy as np
import pytest

from coxsel.data import SurvivalDataset, build_risk_index


def make_survival(n, p, seed, signal=0.5, censor=0.4, ties=False):
    """A generic right-censored sample with optional duplicated times."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p + 1))
    beta = np.zeros(p + 1)
    beta[: max(1, (p + 1) // 2)] = signal
    t = rng.exponential(np.exp(-(x @ beta)))
    c = rng.exponential(np.exp(-censor * x[:, 0]))
    time = np.minimum(t, c)
    if ties:
        time = np.round(time, 1) + 0.05
    status = (t <= c).astype(np.float64)
    return SurvivalDataset(time, status, x[:, 0], x[:, 1:])


@pytest.fixture(scope="session")
def medium_data():
    return make_survival(n=120, p=4, seed=5)


@pytest.fixture(scope="session")
def medium_index(medium_data):
    return build_risk_index(medium_data)
