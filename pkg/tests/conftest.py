"""
Pytest configuration and fixtures for the weak Galerkin solver tests
"""
import pytest
import pytest_asyncio
from typing import AsyncGenerator
from httpx import AsyncClient
from starlette.testclient import TestClient
import numpy as np
import sys
import os

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from app import app
from services.assembly_service import AssemblyService
from services.mesh_service import MeshParams, MeshService
from services.problem_service import ProblemService
from services.weak_operator_service import ElementGeometry


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long convergence runs")


@pytest.fixture
def test_client():
    """Test client for FastAPI app."""
    return TestClient(app)


@pytest_asyncio.fixture
async def async_client() -> AsyncGenerator[AsyncClient, None]:
    """Async test client for FastAPI app."""
    from httpx import ASGITransport
    async with AsyncClient(transport=ASGITransport(app=app), base_url="http://test") as client:
        yield client


@pytest.fixture
def reference_triangle():
    """Unit reference triangle (0,0), (1,0), (0,1)."""
    return np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


@pytest.fixture
def reference_geometry(reference_triangle):
    return ElementGeometry.from_vertices(reference_triangle)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture(scope="session")
def layer_mesh():
    """N = 8 Shishkin mesh with a real layer (tau < 1/4)."""
    return MeshService.build_mesh(MeshParams(N=8, epsilon=1e-3, lam=3.0))


@pytest.fixture(scope="session")
def uniform_mesh():
    """N = 4 mesh with tau = 1/4, i.e. uniform."""
    return MeshService.build_mesh(MeshParams(N=4, epsilon=0.5, lam=3.0))


@pytest.fixture
def random_elements(rng, layer_mesh):
    """Twenty triangles of the layer mesh covering every region."""
    picks = []
    for code in (0, 1, 2):
        candidates = np.flatnonzero(layer_mesh.region == code)
        picks.extend(rng.choice(candidates, size=7 if code < 2 else 6, replace=False).tolist())
    return [ElementGeometry.from_mesh(layer_mesh, int(t)) for t in picks]


@pytest.fixture
def operator_set_k2(reference_geometry):
    return AssemblyService.build_operator_set(reference_geometry, 2)


@pytest.fixture
def patch_problem_k2():
    return ProblemService.patch_problem(2, 1e-3)


@pytest.fixture
def sweep_output(tmp_path):
    return str(tmp_path / "results")
