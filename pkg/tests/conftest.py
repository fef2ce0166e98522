import numpy as np
import pytest

from lbspec.geometry import TriangleMesh, VoxelGrid
from lbspec.partgen import icosphere

TETRA_OFF = """OFF
4 4 6
0 0 0
1 0 0
0 1 0
0 0 1
3 0 2 1
3 0 1 3
3 1 2 3
3 0 3 2
"""


@pytest.fixture
def tetra():
    from lbspec.geometry import parse_off
    return parse_off(TETRA_OFF)


@pytest.fixture(scope="session")
def sphere642():
    return icosphere(3)


def block(nx, ny, nz, spacing=(1.0, 1.0, 1.0)):
    return VoxelGrid((nx, ny, nz), spacing, np.ones((nx, ny, nz), dtype=bool))


def unit_triangle():
    return TriangleMesh([[0, 0, 0], [0, 1, 0], [1, 0, 0]], [[0, 1, 2]])


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
