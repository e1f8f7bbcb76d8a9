import json
from importlib import resources

import numpy as np
import pytest

from dynsobol.var_process import VarModel, stationary_covariance

TOY_A = np.array([[0.8, 0.4], [0.1, 0.2]])
TOY_THETA = 0.1 * np.eye(2)


def load_data_model(name: str) -> VarModel:
    doc = json.loads(resources.files("dynsobol.data").joinpath(name).read_text())
    return VarModel.from_dict(doc)


@pytest.fixture(scope="session")
def toy_model():
    return VarModel(TOY_A, TOY_THETA, names=("X", "Z"))


@pytest.fixture(scope="session")
def toy_cov(toy_model):
    return stationary_covariance(toy_model)


@pytest.fixture(scope="session")
def building_inputs():
    return load_data_model("building_var2.json")


@pytest.fixture(scope="session")
def independent_model():
    """Two coordinates with no cross dependence at any lag."""
    return VarModel(np.diag([0.7, -0.3]), np.diag([0.5, 2.0]))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
