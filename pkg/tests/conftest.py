import numpy as np
import pytest

from electrolocation import forward as fw
from electrolocation import imaging as im
from electrolocation import measurements as ms
from electrolocation.geometry import default_fish

Z_TARGET = 1.5 * np.array([np.cos(np.pi / 3), np.sin(np.pi / 3)])
Z_SECOND = Z_TARGET - np.array([1.0, 0.0])


@pytest.fixture(scope="session")
def fish():
    return default_fish()


@pytest.fixture(scope="session")
def solver(fish):
    return fw.FishSolver.build(fish, 256)


@pytest.fixture(scope="session")
def background(solver):
    return solver.background()


@pytest.fixture(scope="session")
def grid64(fish, solver):
    return im.GridIllumination.build(im.GridSpec(), fish, solver)


@pytest.fixture(scope="session")
def disk_target():
    return fw.TargetSpec.disk(Z_TARGET, 0.05, 2.0, 1.0)


@pytest.fixture(scope="session")
def disk_measurement10(solver, disk_target):
    return ms.measure(solver, disk_target, disk_target.spectrum(range(1, 11)))


@pytest.fixture(scope="session")
def disk_measurement100(solver, disk_target):
    return ms.measure(solver, disk_target, disk_target.spectrum(range(1, 101)))


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
