"""Uniform torus mesh and the discrete calculus living on it.

The spatial domain is the one-dimensional torus R/Z, split into N cells of
width delta = 1/N.  Mesh functions ("fields") are plain numpy arrays with one
value per site; every operator here wraps around cyclically.  All functions
are pure, so meshes and fields can be shared freely between threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "Mesh",
    "difference",
    "apply_laplacian",
    "laplacian_matrix",
    "frequency_window",
    "laplacian_eigenvalues",
    "laplacian_spectrum",
    "integral",
    "lp_norm",
    "cell_average",
    "fisher_information",
    "hat_basis",
    "flux_basis",
    "hat_interpolant",
    "flux_interpolant",
    "hat_and_flux_interpolants",
    "as_density",
]

CELL_AVERAGE_PANELS = 32  # Simpson panels per cell; fixed for reproducibility


@dataclass(frozen=True)
class Mesh:
    """N-cell uniform discretization of the torus, delta = 1/N.

    Sites are xi_j = j*delta for j = 0..N-1 with cyclic index arithmetic
    (index N wraps to 0); the cell around xi is the centered interval of
    width delta.
    """

    n_cells: int

    def __post_init__(self):
        if not isinstance(self.n_cells, (int, np.integer)) or self.n_cells < 2:
            raise ValueError(f"mesh needs an integer cell count >= 2, got {self.n_cells!r}")
        object.__setattr__(self, "n_cells", int(self.n_cells))

    @property
    def delta(self) -> float:
        return 1.0 / self.n_cells

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.n_cells) * self.delta

    def check_field(self, values) -> np.ndarray:
        values = np.asarray(values)
        if values.shape != (self.n_cells,):
            raise ValueError(f"field has shape {values.shape}, expected ({self.n_cells},)")
        return values


def as_density(mesh: Mesh, values, normalized: bool = True, mass_tol: float = 1e-12) -> np.ndarray:
    """Validate values as a strictly positive density, optionally of unit mass."""
    n = np.asarray(mesh.check_field(values), dtype=float)
    if not np.all(n > 0.0):
        raise ValueError("density must be strictly positive at every site")
    if normalized:
        mass = integral(mesh, n)
        if abs(mass - 1.0) > mass_tol:
            raise ValueError(f"density mass {mass!r} deviates from 1 by more than {mass_tol}")
    return n


def difference(mesh: Mesh, f, direction: str = "forward") -> np.ndarray:
    """Forward/backward difference quotient with cyclic wraparound."""
    f = mesh.check_field(f)
    if direction == "forward":
        return (np.roll(f, -1) - f) / mesh.delta
    if direction == "backward":
        return (f - np.roll(f, 1)) / mesh.delta
    raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")


def apply_laplacian(mesh: Mesh, f) -> np.ndarray:
    """Central second difference (f(x+delta) + f(x-delta) - 2 f(x)) / delta^2."""
    f = mesh.check_field(f)
    return (np.roll(f, -1) + np.roll(f, 1) - 2.0 * f) / mesh.delta**2


@lru_cache(maxsize=64)
def laplacian_matrix(mesh: Mesh) -> np.ndarray:
    """Matrix of the central Laplacian; rows wrap cyclically (N=2 doubles the coupling)."""
    n = mesh.n_cells
    s = 1.0 / mesh.delta**2
    mat = np.zeros((n, n))
    idx = np.arange(n)
    np.add.at(mat, (idx, (idx + 1) % n), s)
    np.add.at(mat, (idx, (idx - 1) % n), s)
    mat[idx, idx] -= 2.0 * s
    mat.setflags(write=False)
    return mat


def frequency_window(n_cells: int) -> np.ndarray:
    """The N consecutive integer frequencies used for spectral sums.

    Even N runs from -(N/2-1) to N/2, odd N is symmetric.  Any window of N
    consecutive integers yields the same operators since frequencies are
    N-periodic on the mesh; this choice is a normalization only.
    """
    if n_cells % 2 == 0:
        return np.arange(-(n_cells // 2 - 1), n_cells // 2 + 1)
    return np.arange(-(n_cells - 1) // 2, (n_cells - 1) // 2 + 1)


def laplacian_eigenvalues(mesh: Mesh, k=None) -> np.ndarray:
    """Eigenvalues omega_k of minus the discrete Laplacian.

    Evaluated as (2 N sin(pi k / N))^2, identical to
    2 (1 - cos(2 pi k delta)) / delta^2 but exact at the Nyquist mode: there
    k / N = 1/2 is representable, the sine evaluates to one, and omega equals
    16 (N/2)^2 without rounding slack.
    """
    if k is None:
        k = frequency_window(mesh.n_cells)
    k = np.asarray(k)
    s = 2.0 * mesh.n_cells * np.sin(np.pi * (k / mesh.n_cells))
    return s * s


def laplacian_spectrum(mesh: Mesh):
    """Eigenpairs of minus the discrete Laplacian on the standard window.

    Returns (k, omega, vectors) with vectors[:, i] the mode exp(2 pi i k_i x)
    sampled on the sites.  The columns are orthonormal in the scaled L2
    scalar product delta * sum conj(f) g as returned.
    """
    k = frequency_window(mesh.n_cells)
    omega = laplacian_eigenvalues(mesh, k)
    vectors = np.exp(2j * np.pi * np.outer(mesh.sites, k))
    return k, omega, vectors


def integral(mesh: Mesh, f) -> float | complex:
    """Scaled sum delta * sum_xi f, the integral of the piecewise constant representative."""
    return mesh.delta * np.sum(mesh.check_field(f))


def lp_norm(mesh: Mesh, f, p) -> float:
    """Scaled L^p norm (delta sum |f|^p)^(1/p), or max |f| for p = inf."""
    f = mesh.check_field(f)
    if p == np.inf or p == float("inf"):
        return float(np.max(np.abs(f)))
    p = float(p)
    if p < 1.0:
        raise ValueError(f"p must be >= 1 or inf, got {p}")
    return float((mesh.delta * np.sum(np.abs(f) ** p)) ** (1.0 / p))


def cell_average(mesh: Mesh, sampler, panels: int = CELL_AVERAGE_PANELS) -> np.ndarray:
    """Project a function on [0,1) to the mesh by averaging over cells.

    Each cell integral uses composite Simpson with `panels` subintervals
    (default 32), a fixed rule so identical initial data can be reproduced
    elsewhere.  The sampler must accept numpy arrays; failures propagate.
    """
    if panels % 2 != 0 or panels < 2:
        raise ValueError("Simpson rule needs an even panel count >= 2")
    d = mesh.delta
    offsets = (np.arange(panels + 1) / panels - 0.5) * d
    points = np.mod(mesh.sites[:, None] + offsets[None, :], 1.0)
    values = np.asarray(sampler(points), dtype=float)
    weights = np.ones(panels + 1)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    weights *= (d / panels) / 3.0
    return (values @ weights) / d


def fisher_information(mesh: Mesh, n) -> float:
    """Discrete Fisher information delta * sum (D+ sqrt(n))^2 of a positive field."""
    n = np.asarray(mesh.check_field(n), dtype=float)
    if not np.all(n > 0.0):
        raise ValueError("Fisher information needs a strictly positive field")
    root = np.sqrt(n)
    return float(integral(mesh, difference(mesh, root, "forward") ** 2))


def _hat_weights(mesh: Mesh, x):
    """Cell index j and barycentric coordinate of x within [x_j, x_{j+1})."""
    x = np.asarray(x, dtype=float)
    u = np.mod(x, 1.0) * mesh.n_cells
    j = np.floor(u).astype(int) % mesh.n_cells
    frac = u - np.floor(u)
    return j, frac


def hat_interpolant(mesh: Mesh, values):
    """Piecewise linear periodic interpolant through the site values."""
    values = np.asarray(mesh.check_field(values), dtype=float)
    n = mesh.n_cells

    def evaluate(x):
        j, frac = _hat_weights(mesh, x)
        return values[j] * (1.0 - frac) + values[(j + 1) % n] * frac

    return evaluate


def flux_interpolant(mesh: Mesh, values):
    """Piecewise quadratic interpolant built on the bump profiles.

    The bump attached to site zeta is the primitive of the hat difference,
    supported on (zeta - delta, zeta + 2 delta), bounded by one, of integral
    delta.  Its x-derivative equals minus the forward site difference of the
    hats, which makes d/dx of this interpolant the exact image of a backward
    divergence under the hat interpolant.
    """
    values = np.asarray(mesh.check_field(values), dtype=float)
    n = mesh.n_cells

    def evaluate(x):
        j, frac = _hat_weights(mesh, x)
        # Contributions of the three bumps covering [x_j, x_{j+1}):
        #   site j+1 rising tail, site j plateau, site j-1 falling tail.
        w_next = 0.5 * frac**2
        w_here = 0.5 + frac - frac**2
        w_prev = 0.5 - frac + 0.5 * frac**2
        return values[(j + 1) % n] * w_next + values[j] * w_here + values[(j - 1) % n] * w_prev

    return evaluate


def hat_and_flux_interpolants(mesh: Mesh, n, flux_values):
    """Continuum evaluators (hat interpolant of n, bump interpolant of the flux)."""
    return hat_interpolant(mesh, n), flux_interpolant(mesh, flux_values)


def hat_basis(mesh: Mesh, j: int, x):
    """The periodic hat centered at site j, evaluated at x."""
    e = np.zeros(mesh.n_cells)
    e[j % mesh.n_cells] = 1.0
    return hat_interpolant(mesh, e)(x)


def flux_basis(mesh: Mesh, j: int, x):
    """The periodic bump attached to site j, evaluated at x."""
    e = np.zeros(mesh.n_cells)
    e[j % mesh.n_cells] = 1.0
    return flux_interpolant(mesh, e)(x)
