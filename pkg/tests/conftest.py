import numpy as np
import pytest

from fadmm import ModelParams, calibrated_params


@pytest.fixture(scope="session")
def baseline() -> ModelParams:
    """Paper baseline with psi calibrated to 30 expected arrivals per side."""
    return calibrated_params(ModelParams())


@pytest.fixture(scope="session")
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
