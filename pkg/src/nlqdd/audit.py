"""Randomized audit of the structural inequalities and oracle equivalences.

Every check encodes a proven statement (matrix-trace inequalities, spectral
bounds, interpolation estimates) or an exact equivalence between two
computation routes, evaluated on seeded random inputs.  Each returns its
worst margin so violations are quantified, and the CLI turns any failure
into a nonzero exit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np
from scipy.linalg import eigh, eigvalsh

from .dynamics import nlqdd_rhs
from .grid import (
    Mesh,
    cell_average,
    difference,
    fisher_information,
    integral,
    laplacian_eigenvalues,
    lp_norm,
)
from .liouville import double_commutator_diag
from .maxwellian import (
    dual_jacobian,
    free_energy,
    free_energy_floor,
    partition_function,
    quantum_exponential,
    solve_potential,
)

__all__ = ["CheckResult", "run_property_audit", "AUDIT_CHECKS"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    worst_margin: float   # >= 0 means the inequality held with that slack
    detail: str


def _random_density_matrix(rng, n, complex_entries=True):
    shape = (n, n)
    x = rng.standard_normal(shape)
    if complex_entries:
        x = x + 1j * rng.standard_normal(shape)
    r = x @ x.conj().T
    return r / np.trace(r).real


def _random_hermitian(rng, n, scale=1.0, complex_entries=True):
    x = rng.standard_normal((n, n))
    if complex_entries:
        x = x + 1j * rng.standard_normal((n, n))
    return scale * 0.5 * (x + x.conj().T)


def _random_smooth_potential(rng, mesh, degree=4, amplitude=1.0):
    x = mesh.sites
    a = np.full(mesh.n_cells, rng.normal(scale=amplitude))
    for k in range(1, degree + 1):
        a += rng.normal(scale=amplitude / k) * np.cos(2 * np.pi * k * x)
        a += rng.normal(scale=amplitude / k) * np.sin(2 * np.pi * k * x)
    return a


def _random_density(rng, mesh, amplitude=0.5):
    n = np.exp(_random_smooth_potential(rng, mesh, degree=3, amplitude=amplitude))
    return n / integral(mesh, n)


def _hermitian_log(matrix):
    lam, vec = eigh(matrix)
    return (vec * np.log(lam)) @ vec.conj().T


def check_klein_log(rng, trials=1000, max_n=8, tol=1e-12) -> CheckResult:
    """tr((S-R)(log S - log R)) >= tr((R-S)^2) on random density matrix pairs."""
    worst = np.inf
    for _ in range(trials):
        n = int(rng.integers(2, max_n + 1))
        r = _random_density_matrix(rng, n)
        s = _random_density_matrix(rng, n)
        lhs = np.trace((s - r) @ (_hermitian_log(s) - _hermitian_log(r))).real
        rhs = np.trace((r - s) @ (r - s)).real
        worst = min(worst, lhs - rhs)
    return CheckResult("klein_log_pairing", worst >= -tol, float(worst),
                       f"{trials} random pairs, N <= {max_n}")


def check_exp_pairing(rng, trials=1000, max_n=8, tol=1e-12) -> CheckResult:
    """tr((exp A' - exp A)(A' - A)) >= 0 for random self-adjoint pairs."""
    worst = np.inf
    for _ in range(trials):
        n = int(rng.integers(2, max_n + 1))
        a = _random_hermitian(rng, n, scale=0.5)
        b = _random_hermitian(rng, n, scale=0.5)
        ea = eigh(a)
        eb = eigh(b)
        exp_a = (ea[1] * np.exp(ea[0])) @ ea[1].conj().T
        exp_b = (eb[1] * np.exp(eb[0])) @ eb[1].conj().T
        val = np.trace((exp_b - exp_a) @ (b - a)).real
        worst = min(worst, val)
    return CheckResult("exp_difference_pairing", worst >= -tol, float(worst),
                       f"{trials} random pairs, N <= {max_n}")


def check_exponential_monotone(rng, trials=200, hbar=0.2, sizes=(4, 8), tol=1e-12) -> CheckResult:
    """Scaled pairing of density differences against potential differences is >= 0."""
    worst = np.inf
    for _ in range(trials):
        mesh = Mesh(int(rng.choice(sizes)))
        a = _random_smooth_potential(rng, mesh)
        b = _random_smooth_potential(rng, mesh)
        na, _ = quantum_exponential(mesh, a, hbar)
        nb, _ = quantum_exponential(mesh, b, hbar)
        worst = min(worst, float(integral(mesh, (na - nb) * (a - b))))
    return CheckResult("quantum_exponential_monotone", worst >= -tol, float(worst),
                       f"{trials} potential pairs, hbar={hbar}")


def check_trace_monotone(rng, trials=200, max_n=8, tol=1e-12) -> CheckResult:
    """A <= A' implies tr exp(A) <= tr exp(A')."""
    worst = np.inf
    for _ in range(trials):
        n = int(rng.integers(2, max_n + 1))
        a = _random_hermitian(rng, n)
        bump = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        a_up = a + bump @ bump.conj().T / n
        val = np.sum(np.exp(eigvalsh(a_up))) - np.sum(np.exp(eigvalsh(a)))
        worst = min(worst, float(val))
    return CheckResult("trace_exp_monotone", worst >= -tol, float(worst),
                       f"{trials} ordered pairs, N <= {max_n}")


def check_spectrum_lower_bound(max_n=1024, tol=0.0) -> CheckResult:
    """omega_k >= 16 k^2 for |k| <= N/2, exhaustively; equality at Nyquist."""
    worst = np.inf
    for n in range(2, max_n + 1):
        mesh = Mesh(n)
        k = np.arange(-(n // 2), n // 2 + 1)
        omega = laplacian_eigenvalues(mesh, k)
        worst = min(worst, float(np.min(omega - 16.0 * k.astype(float) ** 2)))
    return CheckResult("laplacian_eigenvalue_bound", worst >= -tol, float(worst),
                       f"all N up to {max_n}")


def check_laplace_transform_sum(tol=1e-12) -> CheckResult:
    """Window sums of exp(-alpha omega_k) <= 1 + sqrt(pi)/4 alpha^(-1/2)."""
    worst = np.inf
    alphas = np.geomspace(1e-3, 10.0, 25)
    for n in (2, 3, 8, 17, 64, 256, 1024):
        omega = laplacian_eigenvalues(Mesh(n))
        for alpha in alphas:
            bound = 1.0 + np.sqrt(np.pi) / 4.0 * alpha**-0.5
            worst = min(worst, float(bound - np.sum(np.exp(-alpha * omega))))
    return CheckResult("laplace_transform_bound", worst >= -tol, float(worst),
                       "alpha in [1e-3, 10], N up to 1024")


def check_h1_linfty(rng, trials=200, tol=1e-12) -> CheckResult:
    """Normalized fields obey max |psi| <= 1 + ||D+ psi||, p in {1, 2}."""
    worst = np.inf
    for _ in range(trials):
        mesh = Mesh(int(rng.choice([2, 4, 8, 32, 128])))
        psi = rng.standard_normal(mesh.n_cells)
        for p in (1, 2):
            scaled = psi / lp_norm(mesh, psi, p)
            bound = 1.0 + lp_norm(mesh, difference(mesh, scaled, "forward"), p)
            worst = min(worst, float(bound - lp_norm(mesh, scaled, np.inf)))
    return CheckResult("h1_linfty_bound", worst >= -tol, float(worst),
                       f"{trials} random fields, p in (1, 2)")


def check_fisher_bound(tol=1e-12) -> CheckResult:
    """Cell-averaged densities have Fisher information <= 8 x continuum value."""
    from .presets import preset_sampler

    worst = np.inf
    fine = np.linspace(0.0, 1.0, 1 << 14, endpoint=False)
    for name in ("cosine-bump", "gaussian-mixture"):
        g = preset_sampler(name)
        root = np.sqrt(g(fine))
        deriv = np.gradient(root, fine, edge_order=2)
        continuum = float(np.mean(deriv**2))
        for n in (16, 64, 256):
            mesh = Mesh(n)
            disc = fisher_information(mesh, cell_average(mesh, g))
            worst = min(worst, 8.0 * continuum - disc)
    return CheckResult("fisher_factor8", worst >= -tol, float(worst),
                       "presets at N in (16, 64, 256)")


def check_holder_interpolation(rng, trials=50, tol=1e-12) -> CheckResult:
    """C^(1/10) seminorm of zero-average trig polynomials against the
    2^(6/5) ||f'||^(4/5) ||F||^(1/5) bound, estimated on a 512-point grid."""
    grid = np.arange(512) / 512.0
    worst = np.inf
    for _ in range(trials):
        degree = 8
        ck = rng.standard_normal(degree) / np.arange(1, degree + 1)
        sk = rng.standard_normal(degree) / np.arange(1, degree + 1)
        k = np.arange(1, degree + 1)
        f = np.cos(2 * np.pi * np.outer(grid, k)) @ ck + np.sin(2 * np.pi * np.outer(grid, k)) @ sk
        # Parseval: ||f'||^2 = sum (2 pi k)^2 (c^2 + s^2)/2, primitive likewise
        power = (ck**2 + sk**2) / 2.0
        norm_df = np.sqrt(np.sum((2 * np.pi * k) ** 2 * power))
        norm_big_f = np.sqrt(np.sum(power / (2 * np.pi * k) ** 2))
        diff = np.abs(f[:, None] - f[None, :])
        dist = np.abs(np.subtract.outer(grid, grid))
        dist = np.minimum(dist, 1.0 - dist)
        mask = dist > 0
        seminorm = float(np.max(diff[mask] / dist[mask] ** 0.1))
        bound = 2.0 ** 1.2 * norm_df**0.8 * norm_big_f**0.2
        worst = min(worst, (bound - seminorm) / bound)
    return CheckResult("holder_interpolation", worst >= -tol, float(worst),
                       f"{trials} trig polynomials of degree <= 8")


def check_constraint_satisfaction(rng, trials=25, hbar=0.15, tol_factor=2.0) -> CheckResult:
    """Every solve meets its own diagonal constraint tolerance (N = 2 included)."""
    worst = np.inf
    for trial in range(trials):
        mesh = Mesh(2 if trial == 0 else int(rng.choice([4, 8, 16, 32])))
        n = _random_density(rng, mesh)
        tol = 1e-11 * float(np.max(mesh.delta * n))
        state = solve_potential(mesh, n, hbar, tol=tol)
        gap = float(np.max(np.abs(np.diag(state.matrix) - mesh.delta * n)))
        worst = min(worst, tol_factor * tol - gap)
    return CheckResult("maxwellian_constraint", worst >= 0.0, float(worst),
                       f"{trials} random solves incl. N=2, hbar={hbar}")


def check_entropy_floor(rng, trials=60, tol=1e-12) -> CheckResult:
    """Solved-state entropies and free energies respect the hbar floor."""
    worst = np.inf
    for _ in range(trials):
        hbar = float(rng.choice([0.05, 0.1, 0.5]))
        mesh = Mesh(int(rng.choice([4, 8, 16])))
        state = solve_potential(mesh, _random_density(rng, mesh), hbar)
        worst = min(worst, state.entropy - free_energy_floor(hbar**2))
        r = _random_density_matrix(rng, mesh.n_cells)
        worst = min(worst, free_energy(mesh, r, hbar) - free_energy_floor(hbar**2))
    return CheckResult("entropy_floor", worst >= -tol, float(worst),
                       f"{trials} solved states and random density matrices")


def check_potential_bounds(rng, trials=60, tol=1e-10) -> CheckResult:
    """min A <= -log Z <= max A and A <= 2 (hbar/delta)^2 for unit-mass states."""
    worst = np.inf
    for _ in range(trials):
        hbar = float(rng.choice([0.05, 0.1, 0.5]))
        mesh = Mesh(int(rng.choice([4, 8, 16])))
        state = solve_potential(mesh, _random_density(rng, mesh), hbar)
        log_z = np.log(partition_function(mesh, hbar))
        worst = min(worst, float(-log_z - state.potential.min()))
        worst = min(worst, float(state.potential.max() + log_z))
        worst = min(worst, float(2.0 * (hbar / mesh.delta) ** 2 - state.potential.max()))
    return CheckResult("potential_bounds", worst >= -tol, float(worst),
                       f"{trials} solved unit-mass states")


def check_nu_bounds(rng, trials=60, tol=1e-12) -> CheckResult:
    """Transport coefficients are positive with scaled sums at most one."""
    worst = np.inf
    for _ in range(trials):
        hbar = float(rng.choice([0.05, 0.1, 0.5]))
        mesh = Mesh(int(rng.choice([4, 8, 16, 32])))
        state = solve_potential(mesh, _random_density(rng, mesh), hbar)
        worst = min(worst, float(state.nu_plus.min()), float(state.nu_minus.min()))
        worst = min(worst, float(1.0 - integral(mesh, state.nu_plus)))
        worst = min(worst, float(1.0 - integral(mesh, state.nu_minus)))
    return CheckResult("nu_coefficient_bounds", worst >= -tol, float(worst),
                       f"{trials} solved states")


def check_jacobian_oracle(rng, trials=3, n=8, hbar=0.2, step=1e-5, tol=1e-6) -> CheckResult:
    """Analytic dual Jacobian against central finite differences."""
    mesh = Mesh(n)
    worst = np.inf
    for _ in range(trials):
        a = _random_smooth_potential(rng, mesh)
        jac = dual_jacobian(mesh, a, hbar)
        fd = np.zeros_like(jac)
        for j in range(n):
            e = np.zeros(n)
            e[j] = step
            plus, _ = quantum_exponential(mesh, a + e, hbar)
            minus, _ = quantum_exponential(mesh, a - e, hbar)
            fd[:, j] = mesh.delta * (plus - minus) / (2 * step)
        rel = np.linalg.norm(jac - fd) / np.linalg.norm(fd)
        worst = min(worst, tol - float(rel))
    return CheckResult("jacobian_finite_difference", worst >= 0.0, float(worst),
                       f"{trials} potentials, N={n}, step {step}")


def check_rhs_equivalence(rng, trials=10, configs=((8, 0.1), (16, 0.1), (32, 0.05)),
                          tol=1e-10) -> CheckResult:
    """Divergence-form rate equals the scaled double-commutator diagonal.

    The gap floor is roundoff amplified by hbar^2 omega_max^2, so the largest
    mesh pairs with a smaller hbar to stay well under the tolerance.
    """
    worst = np.inf
    for trial in range(trials):
        n_cells, hbar = configs[trial % len(configs)]
        mesh = Mesh(n_cells)
        n = _random_density(rng, mesh)
        ndot, state = nlqdd_rhs(mesh, n, hbar)
        oracle = double_commutator_diag(mesh, state.matrix, hbar)
        worst = min(worst, tol - float(np.max(np.abs(ndot - oracle))))
    return CheckResult("rhs_double_commutator", worst >= 0.0, float(worst),
                       f"{trials} states, (N, hbar) in {configs}")


AUDIT_CHECKS = (
    "klein_log_pairing",
    "exp_difference_pairing",
    "quantum_exponential_monotone",
    "trace_exp_monotone",
    "laplacian_eigenvalue_bound",
    "laplace_transform_bound",
    "h1_linfty_bound",
    "fisher_factor8",
    "holder_interpolation",
    "maxwellian_constraint",
    "entropy_floor",
    "potential_bounds",
    "nu_coefficient_bounds",
    "jacobian_finite_difference",
    "rhs_double_commutator",
)


def run_property_audit(seed: int = 0, quick: bool = False) -> List[CheckResult]:
    """Run every audit check with a common seed; quick mode trims trial counts."""
    rng = np.random.default_rng(seed)
    scale = 0.2 if quick else 1.0

    def trials(n):
        return max(2, int(n * scale))

    return [
        check_klein_log(rng, trials=trials(1000)),
        check_exp_pairing(rng, trials=trials(1000)),
        check_exponential_monotone(rng, trials=trials(200)),
        check_trace_monotone(rng, trials=trials(200)),
        check_spectrum_lower_bound(max_n=256 if quick else 1024),
        check_laplace_transform_sum(),
        check_h1_linfty(rng, trials=trials(200)),
        check_fisher_bound(),
        check_holder_interpolation(rng, trials=trials(50)),
        check_constraint_satisfaction(rng, trials=trials(25)),
        check_entropy_floor(rng, trials=trials(60)),
        check_potential_bounds(rng, trials=trials(60)),
        check_nu_bounds(rng, trials=trials(60)),
        check_jacobian_oracle(rng, trials=trials(3)),
        check_rhs_equivalence(rng, trials=trials(10)),
    ]
