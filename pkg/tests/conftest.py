import math

import numpy as np
import pytest

from scatterlab.services.forward import Disk, IncidentField, Scatterer
from scatterlab.services.geometry import Polygon

# Small meshes keep solver tests at desk scale
SMALL_MESH = {"order": 10, "panels_per_half_edge": 4}


@pytest.fixture
def triangle() -> Polygon:
    """Admissible acute triangle."""
    return Polygon(np.array([[0.0, 0.0], [1.0, 0.0], [0.3, 0.8]]))


@pytest.fixture
def square() -> Polygon:
    return Polygon(np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]]))


@pytest.fixture
def disjoint_triangles() -> tuple[Polygon, Polygon]:
    """D and D' separated along x; the Hausdorff distance is realized at (-1, -0.3) of D."""
    d = Polygon(np.array([[-1.0, -0.3], [0.0, -0.3], [-0.5, 0.5]]))
    d_prime = Polygon(np.array([[0.4, -0.3], [1.0, -0.3], [0.7, 0.2]]))
    return d, d_prime


@pytest.fixture
def unit_disk() -> Disk:
    return Disk((0.0, 0.0), 1.0)


@pytest.fixture
def plane_wave() -> IncidentField:
    return IncidentField.plane_wave(1.0, 0.0)


@pytest.fixture
def triangle_scatterer(triangle) -> Scatterer:
    return Scatterer(triangle, gamma=2.0, q=1.0)


@pytest.fixture
def right_angle() -> float:
    return 0.5 * math.pi
