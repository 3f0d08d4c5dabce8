import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cathrod import rod

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

CANTILEVER = dict(youngs_bend=5.9e6, density=11040.0, radius=0.006, length=0.12)
ALONG_X = rod.orientation_quaternion([1.0, 0.0, 0.0], [0.0, 1.0, 0.0])


def cantilever_params(n: int = 40, **changes) -> rod.RodParameters:
    return rod.RodParameters(num_points=n, **{**CANTILEVER, **changes})


def perturbed_state(params: rod.RodParameters, rng: np.random.Generator,
                    point_noise: float = 1e-3, quat_noise: float = 0.05) -> rod.RodState:
    state = rod.make_rod(params, base_orientation=ALONG_X)
    points = state.points + point_noise * rng.standard_normal(state.points.shape)
    quats = state.quaternions + quat_noise * rng.standard_normal(state.quaternions.shape)
    return rod.RodState(points, quats)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
