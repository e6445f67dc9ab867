import numpy as np
import pytest

from estimators.config import DebiasConfig, FitConfig
from sampling.datasets import HistoricalDataset, NovelDataset, assign_folds
from sampling.simulate import ContinuousDgpParams, dgp_continuous

# lambda = mu = 1/2 keeps every cross-fold system positive definite whatever the sample,
# so the fixtures pin the level instead of letting it adapt
SAFE_LEVEL = 0.5


@pytest.fixture
def simulation():
    return dgp_continuous(ContinuousDgpParams(K=20, n=8, n_new=50, seed=1))


@pytest.fixture
def historical(simulation) -> HistoricalDataset:
    return simulation[0]


@pytest.fixture
def novel(simulation) -> NovelDataset:
    return simulation[1]


@pytest.fixture
def two_fold(historical) -> HistoricalDataset:
    return assign_folds(historical, 2, seed=3)


@pytest.fixture
def four_fold(historical) -> HistoricalDataset:
    return assign_folds(historical, 4, seed=3)


@pytest.fixture
def fit_cfg() -> FitConfig:
    return FitConfig(lambda_=SAFE_LEVEL, L=5, bandwidth=1 / 3, seed=0, adaptive_lambda=False)


@pytest.fixture
def debias_cfg() -> DebiasConfig:
    return DebiasConfig(lambda_=SAFE_LEVEL, L=8, bandwidth=0.5, seed=0, adaptive_lambda=False)


@pytest.fixture
def clustered():
    """Three well separated arms; the novel arm is distributed like arm 2."""
    rng = np.random.default_rng(11)
    centers = np.array([-3.0, 0.0, 3.0])
    n = 40
    A = np.repeat(np.arange(3), n)
    S = centers[A] + 0.1 * rng.normal(size=A.shape[0])
    Y = np.sin(S) + 0.1 * rng.normal(size=A.shape[0])
    D = HistoricalDataset(S=S.reshape(-1, 1), Y=Y, A=A, K=3, n=n)
    Dnew = NovelDataset(S_new=(3.0 + 0.1 * rng.normal(size=60)).reshape(-1, 1))
    return assign_folds(D, 4, seed=5), Dnew
