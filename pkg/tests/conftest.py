import numpy as np
import pytest

from jacfield import raster
from jacfield.mesh import normalize_unit_sphere
from jacfield.primitives import icosahedron, icosphere, tetrahedron


@pytest.fixture(scope="session")
def unit_icosahedron():
    mesh, _, _ = normalize_unit_sphere(icosahedron())
    return mesh


@pytest.fixture(scope="session")
def unit_tetrahedron():
    mesh, _, _ = normalize_unit_sphere(tetrahedron())
    return mesh


@pytest.fixture(scope="session")
def sphere_1280():
    return icosphere(3)


@pytest.fixture
def front_camera():
    return raster.Camera(eye=(0.0, 0.0, 2.5), target=(0.0, 0.0, 0.0),
                         up=(0.0, 1.0, 0.0), fov_deg=45.0, resolution=64)


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-12)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240601)
