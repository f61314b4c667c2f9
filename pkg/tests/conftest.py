import numpy as np
import pytest

from cfcal.idm import THETA_REC, IdmParams
from cfcal.likelihood import DriverModel
from cfcal.synthetic import GroundTruth, generate, reported_model


@pytest.fixture
def rec() -> IdmParams:
    return IdmParams.from_array(THETA_REC)


def small_dataset(order=2, n_drivers=3, duration=20.0, seed=0, sigma_v=0.01, sigma_x=0.005):
    """A few short sawtooth-led drivers generated from one reported model."""
    base = reported_model(max(order, 0))
    drivers = [base] * n_drivers
    leaders = [("sawtooth", dict(low=8.0, high=20.0, period=20.0, phase=5.0 * d))
               for d in range(n_drivers)]
    gt = GroundTruth(drivers=drivers, leaders=leaders, sigma_v=sigma_v, sigma_x=sigma_x, seed=seed)
    return generate(gt, duration, 0.2)


@pytest.fixture(scope="session")
def ar5_model() -> DriverModel:
    return reported_model(5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
