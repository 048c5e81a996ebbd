"""Discrete quantum Maxwellians: matrix exponentials of discrete Schroedinger
operators and the inverse problem from densities to site potentials.

The central object is the real symmetric matrix M = exp(hbar^2 Lap + diag A).
Its scaled diagonal is the quantum exponential of the potential A; inverting
that map for a prescribed positive density is a strictly convex dual problem
solved here by damped Newton iteration.  The Hessian of the dual is the
Frechet derivative of the matrix exponential restricted to diagonal
directions, assembled from eigendata with logarithmic-mean weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigvalsh, get_lapack_funcs

from .grid import Mesh, integral, laplacian_eigenvalues, laplacian_matrix

_SYEVD = get_lapack_funcs("syevd", (np.empty((2, 2), dtype=float),))

__all__ = [
    "SolverError",
    "SpectralData",
    "MaxwellianState",
    "WarmStart",
    "partition_function",
    "free_energy_floor",
    "schroedinger_matrix",
    "quantum_exponential",
    "log_mean_exp_weights",
    "dual_jacobian",
    "solve_potential",
    "free_energy",
    "entropy",
    "nu_coefficients",
    "density_of",
]

ARMIJO_SLOPE = 1e-4
LOG_MEAN_SWITCH = 1e-8


class SolverError(RuntimeError):
    """Newton solve for the dual potential failed; carries diagnostics."""

    def __init__(self, message, residual=None, iterations=None, density=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.density = density


@dataclass(frozen=True)
class SpectralData:
    """Eigendata of hbar^2 Lap + diag A (ascending eigenvalues, orthonormal columns)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def maxwellian_weights(self) -> np.ndarray:
        """Spectrum of the Maxwellian matrix itself."""
        return np.exp(self.eigenvalues)

    def site_eigenfunctions(self, mesh: Mesh) -> np.ndarray:
        """Columns rescaled by delta^(-1/2); orthonormal in the scaled L2 product."""
        return self.eigenvectors / np.sqrt(mesh.delta)


@dataclass(frozen=True)
class MaxwellianState:
    """A solved constrained-entropy state: density, potential and derived data."""

    mesh: Mesh
    hbar: float
    density: np.ndarray
    potential: np.ndarray
    matrix: np.ndarray
    nu_plus: np.ndarray
    nu_minus: np.ndarray
    spectral: SpectralData
    entropy: float
    residual: float
    newton_iterations: int


@dataclass
class WarmStart:
    """Reusable seed for sequences of nearby solves (potential + cached Hessian factor).

    Mutable by design: integrators own one per trajectory and update it after
    every solve.  The cached Cholesky factor enables frozen-Jacobian steps
    and first-order prediction of the next potential; correctness never
    depends on it since the solver falls back to full damped Newton whenever
    frozen steps stall.
    """

    potential: Optional[np.ndarray] = None
    factor: Optional[tuple] = None
    target: Optional[np.ndarray] = None  # delta * density of the last solve
    newton_iterations: int = 0  # running total, handy for ledgers

    def predict(self, new_target: np.ndarray) -> np.ndarray:
        """First-order update of the stored potential for a nearby target."""
        if self.potential is None:
            raise ValueError("no stored solve to predict from")
        if self.factor is None or self.target is None:
            return np.array(self.potential, dtype=float)
        return self.potential + cho_solve(self.factor, new_target - self.target,
                                          check_finite=False)


def partition_function(mesh: Mesh, hbar: float) -> float:
    """Trace of exp(hbar^2 Lap), the normalization of the uniform-density state."""
    return float(np.sum(np.exp(-(hbar**2) * laplacian_eigenvalues(mesh))))


def free_energy_floor(hbar_squared: float) -> float:
    """Mesh-independent lower bound -sqrt(pi)/(4 sqrt(c)) of the free energy
    with diffusion coefficient c in front of the Laplacian."""
    if hbar_squared <= 0:
        raise ValueError("diffusion coefficient must be positive")
    return float(-np.sqrt(np.pi) / (4.0 * np.sqrt(hbar_squared)))


@lru_cache(maxsize=128)
def _diffusion_base(mesh: Mesh, hbar: float) -> np.ndarray:
    base = hbar**2 * laplacian_matrix(mesh)
    base.setflags(write=False)
    return base


def schroedinger_matrix(mesh: Mesh, potential, hbar: float) -> np.ndarray:
    """hbar^2 Lap + diag(potential) as a dense symmetric matrix."""
    a = np.asarray(mesh.check_field(potential), dtype=float)
    h = _diffusion_base(mesh, float(hbar)).copy()
    h.ravel()[:: mesh.n_cells + 1] += a
    return h


def quantum_exponential(mesh: Mesh, potential, hbar: float):
    """Density and matrix of exp(hbar^2 Lap + diag A).

    The density reads off the scaled diagonal n(x_j) = M_jj / delta and is
    strictly positive for every real potential.  hbar = 0 degenerates to the
    pointwise exponential exp(A_j) / delta.
    """
    lam, vec = _eigh_schroedinger(mesh, potential, hbar)
    mat = (vec * np.exp(lam)) @ vec.T
    mat = 0.5 * (mat + mat.T)
    return np.diag(mat) / mesh.delta, mat


def _eigh_schroedinger(mesh: Mesh, potential, hbar: float):
    h = schroedinger_matrix(mesh, potential, hbar)
    lam, vec, info = _SYEVD(h, lower=1, overwrite_a=1)
    if info != 0:  # pragma: no cover - LAPACK failure
        raise SolverError(
            f"eigendecomposition failed (info={info}, operator norm {np.abs(h).max():.3e})"
        )
    return lam, vec


def log_mean_exp_weights(eigenvalues: np.ndarray) -> np.ndarray:
    """Divided differences (e^a - e^b)/(a - b), the logarithmic mean of the
    exponentials.

    Near-degenerate pairs (|a-b| < 1e-8) use the expansion
    e^((a+b)/2) (1 + d^2/24); the naive quotient cancels catastrophically
    there.  Elsewhere the expm1 form keeps full relative accuracy and never
    overflows beyond e^max.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    diff = lam[:, None] - lam[None, :]
    dabs = np.abs(diff)
    upper = np.maximum(lam[:, None], lam[None, :])
    mean = 0.5 * (lam[:, None] + lam[None, :])
    near = dabs < LOG_MEAN_SWITCH
    dsafe = np.where(near, 1.0, dabs)
    far_val = np.exp(upper) * (-np.expm1(-dsafe)) / dsafe
    near_val = np.exp(mean) * (1.0 + diff * diff / 24.0)
    return np.where(near, near_val, far_val)


def _jacobian_from_eigendata(lam: np.ndarray, vec: np.ndarray) -> np.ndarray:
    n = lam.size
    weights = log_mean_exp_weights(lam)
    pair = (vec[:, :, None] * vec[:, None, :]).reshape(n, n * n)
    jac = (pair * weights.ravel()) @ pair.T
    return 0.5 * (jac + jac.T)


def dual_jacobian(mesh: Mesh, potential, hbar: float) -> np.ndarray:
    """Jacobian of A -> diag exp(hbar^2 Lap + diag A); symmetric positive definite."""
    lam, vec = _eigh_schroedinger(mesh, potential, hbar)
    return _jacobian_from_eigendata(lam, vec)


def _dual_objective(lam: np.ndarray, target: np.ndarray, potential: np.ndarray) -> float:
    # Overshooting trial steps may overflow to inf; the line search then
    # rejects them, which is the intended behavior.
    with np.errstate(over="ignore"):
        return float(np.sum(np.exp(lam)) - target @ potential)


def _solve_core(mesh, target, hbar, tol, max_iterations, a, factor):
    """Damped Newton on the dual, with monotone frozen-factor shortcuts.

    Returns (a, lam, vec, res, iterations, factor).  The factor handed back
    is the most recently built Cholesky factor (possibly the input one).
    """

    def evaluate(pot):
        lam, vec = _eigh_schroedinger(mesh, pot, hbar)
        # overshooting trial points may produce inf/nan residuals; they are
        # rejected by the finiteness and contraction guards below
        with np.errstate(over="ignore", invalid="ignore"):
            resid = (vec * vec) @ np.exp(lam) - target
        return lam, vec, resid, float(np.max(np.abs(resid)))

    if not np.all(np.isfinite(a)):
        a, factor = np.log(target), None
    lam, vec, resid, res = evaluate(a)
    if not np.isfinite(res):
        # a stale warm start can land absurdly far out; restart cold
        a, factor = np.log(target), None
        lam, vec, resid, res = evaluate(a)
    frozen_ok = factor is not None
    iterations = 0
    while res > tol:
        if iterations >= max_iterations:
            raise SolverError(
                f"no convergence within {max_iterations} Newton iterations "
                f"(residual {res:.3e}, tol {tol:.3e})",
                residual=res, iterations=iterations,
            )
        iterations += 1

        if frozen_ok:
            # Cheap path: reuse the cached Hessian factor.  Only strong
            # contraction qualifies; anything weaker would trade quadratic
            # Newton convergence for a slow linear crawl.
            trial = a - cho_solve(factor, resid, check_finite=False)
            lam_t, vec_t, resid_t, res_t = evaluate(trial)
            if res_t < 0.2 * res:
                a, lam, vec, resid, res = trial, lam_t, vec_t, resid_t, res_t
                continue
            frozen_ok = False  # stale factor; rebuild below at the old point

        jac = _jacobian_from_eigendata(lam, vec)
        try:
            factor = cho_factor(jac)
        except np.linalg.LinAlgError as exc:
            raise SolverError(
                "dual Hessian lost positive definiteness",
                residual=res, iterations=iterations,
            ) from exc
        step = -cho_solve(factor, resid, check_finite=False)
        phi0 = _dual_objective(lam, target, a)
        slope = float(resid @ step)
        # Below measurable decrease the Armijo test is pure roundoff; the
        # undamped step is correct in the quadratic regime.
        if abs(slope) <= 1e-12 * max(1.0, abs(phi0)):
            a = a + step
        else:
            alpha = 1.0
            while alpha >= 1e-12:
                trial = a + alpha * step
                lam_t = eigvalsh(schroedinger_matrix(mesh, trial, hbar),
                                 check_finite=False, overwrite_a=True)
                if (_dual_objective(lam_t, target, trial)
                        <= phi0 + ARMIJO_SLOPE * alpha * slope):
                    break
                alpha *= 0.5
            else:
                raise SolverError(
                    "backtracking line search stalled",
                    residual=res, iterations=iterations,
                )
            a = a + alpha * step
        lam, vec, resid, res = evaluate(a)
        frozen_ok = True
    return a, lam, vec, res, iterations, factor


def _update_warm(warm, a, lam, vec, factor, iterations, target):
    """Store the solution; refresh the cached factor there when it has aged
    enough that frozen steps stopped converging quickly."""
    warm.potential = a
    warm.target = target
    if factor is not None:
        warm.factor = factor
    if iterations > 3 or warm.factor is None:
        warm.factor = cho_factor(_jacobian_from_eigendata(lam, vec))
    warm.newton_iterations += iterations


def solve_potential(
    mesh: Mesh,
    density,
    hbar: float,
    tol: Optional[float] = None,
    max_iterations: int = 100,
    warm: Optional[WarmStart] = None,
) -> MaxwellianState:
    """Solve the inverse problem: find A with diag exp(hbar^2 Lap + A) = delta n.

    Minimizes the strictly convex dual tr exp(hbar^2 Lap + diag A) - delta n . A
    by damped Newton iteration with Armijo backtracking, started from the
    decoupled solution A = log(delta n) (exact at hbar = 0) unless a warm
    start is supplied.  With a warm start, iterations reuse the cached
    Hessian factor as long as that contracts well, falling back to full
    Newton steps otherwise.

    Parameters
    ----------
    density : strictly positive field; unit mass is not required.
    tol : sup-norm tolerance on diag(M) - delta n.  Default 1e-11 * max(delta n).
    warm : optional WarmStart, updated in place on success.

    Raises
    ------
    SolverError if the iteration cap is exceeded or backtracking stalls; the
    final residual and offending density are attached.
    """
    n_in = np.asarray(mesh.check_field(density), dtype=float)
    if not np.all(n_in > 0.0):
        raise ValueError("density must be strictly positive at every site")
    target = mesh.delta * n_in
    if tol is None:
        tol = 1e-11 * float(np.max(target))

    if warm is not None and warm.potential is not None:
        a0 = warm.predict(target)
        factor0 = warm.factor
    else:
        a0 = np.log(target)
        factor0 = None

    try:
        a, lam, vec, res, iterations, factor = _solve_core(
            mesh, target, hbar, tol, max_iterations, a0, factor0)
    except SolverError as exc:
        exc.density = n_in
        raise

    mat = (vec * np.exp(lam)) @ vec.T
    mat = 0.5 * (mat + mat.T)
    nu_plus, nu_minus = nu_coefficients(mesh, mat)
    state = MaxwellianState(
        mesh=mesh,
        hbar=float(hbar),
        density=n_in,
        potential=a,
        matrix=mat,
        nu_plus=nu_plus,
        nu_minus=nu_minus,
        spectral=SpectralData(eigenvalues=lam, eigenvectors=vec),
        entropy=float(integral(mesh, n_in * a)),
        residual=res,
        newton_iterations=iterations,
    )
    if warm is not None:
        _update_warm(warm, a, lam, vec, factor, iterations, target)
    return state


class LeanMaxwellian:
    """Minimal solved-state view for integrator hot paths: no matrix build."""

    __slots__ = ("potential", "density", "nu_plus", "entropy", "iterations")

    def __init__(self, potential, density, nu_plus, entropy, iterations):
        self.potential = potential
        self.density = density
        self.nu_plus = nu_plus
        self.entropy = entropy
        self.iterations = iterations


def _lean_solve(mesh, density, hbar, warm, tol=None, max_iterations=100):
    """Hot-path solve: skips validation and full state assembly.

    The superdiagonal transport coefficients come straight from the
    eigendata, avoiding the dense matrix product.
    """
    n_in = np.asarray(density, dtype=float)
    target = mesh.delta * n_in
    if tol is None:
        tol = 1e-11 * float(np.max(target))
    if warm.potential is not None:
        a0, factor0 = warm.predict(target), warm.factor
    else:
        a0, factor0 = np.log(target), None
    a, lam, vec, _res, iterations, factor = _solve_core(
        mesh, target, hbar, tol, max_iterations, a0, factor0)
    _update_warm(warm, a, lam, vec, factor, iterations, target)
    weighted = vec * np.exp(lam)
    nu_plus = np.einsum("jk,jk->j", weighted, np.roll(vec, -1, axis=0)) / mesh.delta
    entropy_val = float(integral(mesh, n_in * a))
    return LeanMaxwellian(a, n_in, nu_plus, entropy_val, iterations)


def free_energy(mesh: Mesh, matrix, hbar: float) -> float:
    """tr(R log R) - hbar^2 tr(Lap R) for a density matrix, computed spectrally.

    Eigenvalues in [-1e-12, 0) are clamped to zero with 0 log 0 = 0; anything
    more negative is rejected as not positive semi-definite.
    """
    r = np.asarray(matrix)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValueError("density matrix must be square")
    herm_gap = np.linalg.norm(r - r.conj().T)
    if herm_gap > 1e-10 * max(1.0, np.linalg.norm(r)):
        raise ValueError(f"matrix is not Hermitian (defect {herm_gap:.3e})")
    lam = eigvalsh(r)
    if lam.min() < -1e-12:
        raise ValueError(f"matrix is not positive semi-definite (min eig {lam.min():.3e})")
    lam = np.clip(lam, 0.0, None)
    pos = lam[lam > 0.0]
    ent = float(np.sum(pos * np.log(pos)))
    tr_lap = float(np.trace(laplacian_matrix(mesh) @ r).real)
    return ent - hbar**2 * tr_lap


def entropy(state: MaxwellianState) -> float:
    """Scaled sum of n * A; coincides with the free energy of the state's matrix."""
    return float(integral(state.mesh, state.density * state.potential))


def nu_coefficients(mesh: Mesh, matrix):
    """Next-to-diagonal entries of the Maxwellian matrix, scaled by 1/delta.

    Both directions are strictly positive for hbar > 0, and the backward one
    is the forward one shifted by a site (symmetry of the matrix).
    """
    m = np.asarray(matrix)
    idx = np.arange(mesh.n_cells)
    nu_plus = m[idx, (idx + 1) % mesh.n_cells].real / mesh.delta
    nu_minus = m[idx, (idx - 1) % mesh.n_cells].real / mesh.delta
    return nu_plus, nu_minus


def density_of(mesh: Mesh, matrix) -> np.ndarray:
    """Density on the scaled diagonal of a density matrix; unit trace gives unit mass."""
    d = np.diag(np.asarray(matrix)).real
    if not np.all(d > 0.0):
        raise ValueError("density matrix has a non-positive diagonal entry")
    return d / mesh.delta
