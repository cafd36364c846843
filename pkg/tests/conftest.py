import numpy as np
import pytest

from resolvent_surface import HamiltonianModel
from resolvent_surface.quantum import BasisSpec, diagonalize


@pytest.fixture(scope="session")
def ho():
    return HamiltonianModel("harmonic1d", {"omega": 1.3})


@pytest.fixture(scope="session")
def quartic():
    return HamiltonianModel("quartic1d", {})


@pytest.fixture(scope="session")
def doublewell():
    return HamiltonianModel("doublewell1d", {})


@pytest.fixture(scope="session")
def cq():
    return HamiltonianModel("coupledquartic2d", {})


@pytest.fixture(scope="session")
def quartic_spectrum(quartic):
    return diagonalize(quartic, BasisSpec(80), n_levels=20)


@pytest.fixture(scope="session")
def cq_orbits(cq):
    from resolvent_surface.orbits import scan_orbits
    return scan_orbits(cq, 1.0, max_crossings=1, grid=21, with_maslov=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
