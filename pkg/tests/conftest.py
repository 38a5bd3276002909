import numpy as np
import pytest

from sdalgcp.covariance import PhiGrid, build_cache
from sdalgcp.geometry import Region, square_partition
from sdalgcp.quadrature import QuadratureConfig, build_quadrature

UNIT_SQUARE = [(0, 0), (1, 0), (1, 1), (0, 1)]


@pytest.fixture
def unit_square():
    return Region.from_rings("sq", [UNIT_SQUARE])


@pytest.fixture(scope="session")
def small_partition():
    return square_partition(3, 2, 100.0)


@pytest.fixture(scope="session")
def small_cache(small_partition):
    quads = build_quadrature(small_partition, QuadratureConfig(), "uniform", seed=11)
    return quads, build_cache(quads, PhiGrid(np.array([40.0, 80.0, 120.0, 200.0])))


ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
