import numpy as np
import pytest

from carm_pivot.calibration import calibrate
from carm_pivot.fitting import RansacConfig
from carm_pivot.simulator import NoiseConfig, add_noise, generate, random_scenario

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture(scope="session")
def scenario():
    return random_scenario(0)


@pytest.fixture(scope="session")
def clean_obs(scenario):
    return generate(scenario)


@pytest.fixture(scope="session")
def clean_result(clean_obs):
    return calibrate(clean_obs, RansacConfig(rng_seed=0))


@pytest.fixture(scope="session")
def noisy_obs(scenario):
    """The session scenario with 1 mm translation noise."""
    return add_noise(generate(scenario), NoiseConfig(1.0, 0.0, 0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )
