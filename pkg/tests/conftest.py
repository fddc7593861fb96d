import numpy as np
import pytest

from imfem import experiments as ex, measure as ms
from imfem.mesh import build_uniform_mesh


@pytest.fixture(scope="session")
def mesh16():
    return build_uniform_mesh(16)


@pytest.fixture(scope="session")
def mesh8():
    return build_uniform_mesh(8)


@pytest.fixture(scope="session")
def test_i():
    return ex.velocity_catalog("i")


@pytest.fixture(scope="session")
def sigma1_i_32(mesh16):
    """Primary weight for the constant-drift case, shared across tests."""
    return ms.compute_sigma1(build_uniform_mesh(32), mesh16, ex.velocity_catalog("i"))


@pytest.fixture(scope="session")
def cache_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("field-cache")


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
