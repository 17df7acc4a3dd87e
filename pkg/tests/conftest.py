import numpy as np
import pytest

from ncrecon.nufft import plan_nufft
from ncrecon.simulation import make_coil_maps
from ncrecon.trajectory import SamplingSpec, generate_vd_trajectory


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, shape, dtype=np.complex128):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)).astype(dtype)


@pytest.fixture(scope="session")
def vd_plan_32():
    traj = generate_vd_trajectory(SamplingSpec(image_shape=(32, 32), accel=2, seed=3))
    return plan_nufft((32, 32), traj)


@pytest.fixture(scope="session")
def maps_32():
    return make_coil_maps((32, 32), 8, seed=5)


# PASS/FAIL lines recorded by the acceptance suite, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
