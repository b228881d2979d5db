import numpy as np
import pytest

from aet.mesh import Mesh, generate_disk_mesh


@pytest.fixture(scope="session")
def square_mesh():
    """Unit square split along the diagonal (0,0)-(1,1); 4 boundary edges."""
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    triangles = np.array([[0, 1, 2], [0, 2, 3]])
    return Mesh(nodes, triangles)


@pytest.fixture(scope="session")
def disk_h02():
    return generate_disk_mesh(0.2)


@pytest.fixture(scope="session")
def disk_h01():
    return generate_disk_mesh(0.1)


@pytest.fixture(scope="session")
def disk_h005():
    return generate_disk_mesh(0.05)
