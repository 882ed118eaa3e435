import numpy as np
import pytest

from fracocp.mesh import Square, UnitDisk, make_initial_mesh, uniform_refine

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def square2():
    return make_initial_mesh(Square(2))


@pytest.fixture(scope="session")
def square_r1(square2):
    return uniform_refine(square2)


@pytest.fixture(scope="session")
def square_r3(square2):
    m = square2
    for _ in range(3):
        m = uniform_refine(m)
    return m


@pytest.fixture(scope="session")
def disk16():
    return make_initial_mesh(UnitDisk(16))


@pytest.fixture(scope="session")
def disk_r3(disk16):
    m = disk16
    for _ in range(3):
        m = uniform_refine(m)
    return m


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
