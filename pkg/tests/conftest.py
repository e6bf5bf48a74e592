import numpy as np
import pytest

from uphes.approx import fit_global
from uphes.data import kmedoids, synthetic_prices
from uphes.plant import PlantConfig, default_model


@pytest.fixture(scope="session")
def config():
    return PlantConfig()


@pytest.fixture(scope="session")
def model(config):
    return default_model(config)


@pytest.fixture(scope="session")
def glob(model, config):
    return fit_global(model, config)


@pytest.fixture(scope="session")
def scenarios():
    return kmedoids(synthetic_prices(), 19, 0)[0]


@pytest.fixture(scope="session")
def day_prices(scenarios):
    return np.asarray(scenarios[0].prices, dtype=float)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
