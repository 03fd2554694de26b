"""
Pytest configuration and fixtures.

Shared fixtures and configuration for all tests.
"""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from src.config.config_manager import reset_config
from src.services.mesh import build_disc_mesh, build_interval_mesh

settings.register_profile(
    "crossdiff",
    deadline=None,
    suppress_health_check=[HealthCheck.function_scoped_fixture]
)
settings.load_profile("crossdiff")


@pytest.fixture(autouse=True)
def isolated_config(tmp_path, monkeypatch):
    """Point artifact output at a temporary directory and reload config."""
    monkeypatch.setenv("RESULTS_DIR", str(tmp_path / "results"))
    monkeypatch.delenv("CROSSDIFF_PRESETS_DIR", raising=False)
    monkeypatch.delenv("CROSSDIFF_THREADS", raising=False)
    monkeypatch.delenv("CROSSDIFF_LINEAR_TOL", raising=False)
    reset_config()
    yield
    reset_config()


@pytest.fixture(scope="session")
def interval_mesh():
    """Uniform mesh of [-1, 1] with 101 nodes."""
    return build_interval_mesh(-1.0, 1.0, 101)


@pytest.fixture(scope="session")
def coarse_interval_mesh():
    """Uniform mesh of [-1, 1] with 41 nodes."""
    return build_interval_mesh(-1.0, 1.0, 41)


@pytest.fixture(scope="session")
def disc_mesh():
    """Coarse mesh of the disc of radius 2."""
    return build_disc_mesh(2.0, 0.4)


@pytest.fixture
def rng():
    """Seeded random generator."""
    return np.random.default_rng(1234)


def pytest_configure(config):
    """Configure pytest."""
    config.addinivalue_line(
        "markers", "slow: marks tests as slow (deselect with '-m \"not slow\"')"
    )
    config.addinivalue_line(
        "markers", "integration: marks tests as integration tests"
    )
