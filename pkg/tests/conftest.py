import numpy as np
import pytest

from nlqdd.grid import Mesh, integral


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_smooth_potential(rng, mesh, degree=4, amplitude=1.0):
    """Random low-degree trigonometric polynomial with 1/k coefficient decay."""
    x = mesh.sites
    a = np.full(mesh.n_cells, rng.normal(scale=amplitude))
    for k in range(1, degree + 1):
        a += rng.normal(scale=amplitude / k) * np.cos(2 * np.pi * k * x)
        a += rng.normal(scale=amplitude / k) * np.sin(2 * np.pi * k * x)
    return a


def random_density(rng, mesh, amplitude=0.5, degree=3):
    """Random smooth strictly positive unit-mass density."""
    n = np.exp(random_smooth_potential(rng, mesh, degree=degree, amplitude=amplitude))
    return n / integral(mesh, n)


def random_density_matrix(rng, n, complex_entries=True):
    x = rng.standard_normal((n, n))
    if complex_entries:
        x = x + 1j * rng.standard_normal((n, n))
    r = x @ x.conj().T
    return r / np.trace(r).real
