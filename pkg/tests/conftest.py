import numpy as np
import pytest

from icdc import _accel, scene


@pytest.fixture(params=["numba", "numpy"])
def backend(request, monkeypatch):
    """Run a test once per kernel backend."""
    if request.param == "numba" and not _accel.HAS_NUMBA:
        pytest.skip("numba not installed")
    monkeypatch.setattr(_accel, "USE_NUMBA", request.param == "numba")
    return request.param


@pytest.fixture(scope="session")
def corridor():
    return scene.corridor_scene()


@pytest.fixture(scope="session")
def cam():
    return scene.corridor_camera()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
