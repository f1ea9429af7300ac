import numpy as np
import pytest

from adatrotter.hilbert import SpaceDescriptor, StateVector


def random_state(space: SpaceDescriptor, seed: int) -> StateVector:
    rng = np.random.default_rng(seed)
    amps = rng.normal(size=space.dimension) + 1j * rng.normal(size=space.dimension)
    return StateVector(space, amps / np.linalg.norm(amps))


def random_hermitian_dense(dim: int, seed: int, scale: float = 1.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * (a + a.conj().T) / 2


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
