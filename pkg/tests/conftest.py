import numpy as np
import pytest

from symplane import make_shape
from symplane.geometry import TriangleMesh, normalize


@pytest.fixture(scope="session")
def cube_shape():
    return make_shape("cube", tessellation=4)


@pytest.fixture(scope="session")
def cube_nmesh(cube_shape):
    return cube_shape.normalized()


@pytest.fixture(scope="session")
def lshape_shape():
    return make_shape("lshape", tessellation=6)


@pytest.fixture(scope="session")
def blob_shape():
    return make_shape("blob", seed=7)


def random_mesh(rng: np.random.Generator, n_vertices: int = 30, n_faces: int = 40) -> TriangleMesh:
    """A random (self-intersecting, non-manifold) triangle soup; fine for
    exercising distance and sampling code paths."""
    vertices = rng.normal(size=(n_vertices, 3))
    faces = np.zeros((n_faces, 3), dtype=np.int64)
    for i in range(n_faces):
        faces[i] = rng.choice(n_vertices, size=3, replace=False)
    return TriangleMesh(vertices, faces)


def unit_normal(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)
