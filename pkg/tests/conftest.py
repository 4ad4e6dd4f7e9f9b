import pytest

from wolfflab import KernelSpec, Params, assemble_weights, build_lattice


@pytest.fixture(scope="session")
def prm2():
    return Params(2, 0.5, 2.0)


@pytest.fixture(scope="session")
def prm15():
    return Params(2, 0.8, 1.5)


@pytest.fixture(scope="session")
def kernel2(prm2):
    return KernelSpec(prm2)


@pytest.fixture(scope="session")
def kernel15(prm15):
    return KernelSpec(prm15)


@pytest.fixture(scope="session")
def lat16():
    return build_lattice(([0.0, 0.0], [1.0, 1.0]), 1.0 / 16.0, collar=2, trunc_factor=3.0)


@pytest.fixture(scope="session")
def weights2_16(lat16, kernel2, prm2):
    return assemble_weights(lat16, kernel2, prm2)


@pytest.fixture(scope="session")
def weights15_16(lat16, kernel15, prm15):
    return assemble_weights(lat16, kernel15, prm15)
