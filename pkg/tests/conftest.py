import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mocapsolve.body import BodyParams, load_model

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def model():
    return load_model()


@pytest.fixture(scope="session")
def model24():
    return load_model(layout="56_24")


def random_params(model, rng, theta_range=0.5, root=True):
    theta = rng.uniform(-theta_range, theta_range, (model.n_joints, 3))
    theta[0] = 0.0
    return BodyParams(rng.normal(0, 0.5, model.n_shape), theta,
                      rng.normal(0, 1.0, 3) if root else np.zeros(3),
                      rng.normal(0, 1.0, 3) if root else np.zeros(3))
