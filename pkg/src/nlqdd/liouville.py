"""Collisional quantum Liouville dynamics on density matrices.

The state is a Hermitian, positive definite, unit-trace N x N matrix.  The
reversible part is the commutator with the discrete Laplacian; the BGK
collision relaxes the state toward the constrained-entropy state sharing its
diagonal.  Two parameterizations are supported: the original one with a
relaxation time tau, and the diffusively rescaled one with a small parameter
epsilon, whose diagonal dynamics approach the non-local drift diffusion flow
as epsilon goes to zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.linalg import eigvalsh

from ._stepper import DP_A, DP_ERR, next_step_size
from .grid import Mesh, laplacian_matrix
from .maxwellian import WarmStart, density_of, free_energy, solve_potential

__all__ = [
    "LiouvilleParams",
    "LiouvilleControls",
    "LiouvilleTrajectory",
    "IntegrationError",
    "maxwellian_projection",
    "liouville_rhs",
    "integrate_liouville",
    "double_commutator_diag",
    "diffusive_limit_gap",
    "check_density_matrix",
]


class IntegrationError(RuntimeError):
    """Trajectory integration aborted; carries time and diagnostics."""

    def __init__(self, message, time=None, diagnostics=None):
        super().__init__(message)
        self.time = time
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class LiouvilleParams:
    """Model parameters; exactly one of tau (original form) or epsilon
    (diffusively rescaled form) must be set."""

    mesh: Mesh
    hbar: float
    tau: Optional[float] = None
    epsilon: Optional[float] = None

    def __post_init__(self):
        if self.hbar <= 0:
            raise ValueError("hbar must be positive")
        if (self.tau is None) == (self.epsilon is None):
            raise ValueError("set exactly one of tau or epsilon")
        if self.tau is not None and self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    @property
    def rescaled(self) -> bool:
        return self.epsilon is not None


@dataclass
class LiouvilleControls:
    cfl: float = 0.1
    tol: Optional[float] = None  # None: fixed-step RK4; else adaptive embedded pair
    dt_min: float = 1e-12
    dt_max: float = 0.05
    store_states: bool = False
    sample_times: Optional[Sequence[float]] = None
    positivity_tol: float = 1e-10
    max_steps: int = 2_000_000


@dataclass
class LiouvilleTrajectory:
    params: LiouvilleParams
    times: np.ndarray
    trace_errors: np.ndarray
    hermiticity_errors: np.ndarray
    min_eigenvalues: np.ndarray
    free_energies: np.ndarray
    collision_norms: np.ndarray
    sample_times: np.ndarray
    sample_densities: np.ndarray  # diag R / delta at the sample times
    states: Optional[List[np.ndarray]] = field(default=None, repr=False)

    def dissipation_integral(self) -> float:
        """Trapezoid of 2 ||(M - R)/eps||_F^2 along the recorded times."""
        return float(np.trapezoid(2.0 * self.collision_norms**2, self.times))


def check_density_matrix(mesh: Mesh, matrix, trace_tol=1e-12, herm_tol=1e-12, eig_floor=-1e-12):
    """Validate membership in the set of density matrices; returns diagnostics."""
    r = np.asarray(matrix)
    if r.shape != (mesh.n_cells, mesh.n_cells):
        raise ValueError(f"matrix shape {r.shape} does not match the mesh")
    herm = float(np.linalg.norm(r - r.conj().T))
    tr = complex(np.trace(r))
    lam_min = float(eigvalsh(0.5 * (r + r.conj().T)).min())
    ok = herm <= herm_tol and abs(tr - 1.0) <= trace_tol and lam_min >= eig_floor
    return ok, {"hermiticity": herm, "trace": tr, "min_eigenvalue": lam_min}


def maxwellian_projection(params: LiouvilleParams, matrix, warm: Optional[WarmStart] = None):
    """Constrained-entropy state with the same diagonal as the given matrix."""
    n = density_of(params.mesh, matrix)
    state = solve_potential(params.mesh, n, params.hbar, warm=warm)
    return state.matrix.astype(complex), state


def liouville_rhs(matrix, params: LiouvilleParams, warm: Optional[WarmStart] = None):
    """Right-hand side of the density matrix ODE; Hermitian and traceless.

    Rescaled form:  dR/dt = (i hbar / eps) [Lap, R] + (2 / eps^2) (M[R] - R).
    Original form:  dR/dt = (i hbar / 2)  [Lap, R] + (1 / (hbar tau)) (M[R] - R).

    The collision term vanishes identically on the diagonal because the
    projection matches the diagonal by construction.
    """
    r = np.asarray(matrix, dtype=complex)
    lap = laplacian_matrix(params.mesh)
    proj, _ = maxwellian_projection(params, r, warm=warm)
    comm = lap @ r - r @ lap
    if params.rescaled:
        eps = params.epsilon
        return (1j * params.hbar / eps) * comm + (2.0 / eps**2) * (proj - r)
    return (0.5j * params.hbar) * comm + (proj - r) / (params.hbar * params.tau)


def _relaxation_time_scale(params: LiouvilleParams) -> float:
    if params.rescaled:
        return 0.5 * params.epsilon**2  # collision coefficient is 2/eps^2
    return params.hbar * params.tau


def integrate_liouville(
    matrix0,
    params: LiouvilleParams,
    t_final: float,
    controls: Optional[LiouvilleControls] = None,
) -> LiouvilleTrajectory:
    """Integrate the density matrix ODE with per-step structure repair.

    Fixed-step classic RK4 with dt = cfl * (collision time scale) by default;
    setting controls.tol switches to the adaptive Dormand-Prince pair.  Every
    accepted state is re-Hermitized and trace-renormalized, and loss of
    positive definiteness beyond tolerance aborts with diagnostics.
    """
    controls = controls or LiouvilleControls()
    mesh = params.mesh
    ok, diag = check_density_matrix(mesh, matrix0, trace_tol=1e-9, herm_tol=1e-10, eig_floor=0.0)
    if not ok:
        raise ValueError(f"initial state is not a positive density matrix: {diag}")

    r = np.asarray(matrix0, dtype=complex).copy()
    warm = WarmStart()
    eps_like = params.epsilon if params.rescaled else 1.0

    sample_times = np.asarray(sorted(controls.sample_times or []), dtype=float)
    boundaries = np.unique(np.concatenate([sample_times, [t_final]]))
    boundaries = boundaries[boundaries > 0.0]

    dt_fixed = controls.cfl * _relaxation_time_scale(params)
    adaptive = controls.tol is not None
    dt = min(dt_fixed if not adaptive else min(dt_fixed, controls.dt_max), controls.dt_max)

    times = [0.0]
    states = [r.copy()] if controls.store_states else None
    trace_errors = [abs(complex(np.trace(r)) - 1.0)]
    herm_errors = [float(np.linalg.norm(r - r.conj().T))]
    eigs = eigvalsh(r)
    min_eigs = [float(eigs.min())]
    energies = [free_energy(mesh, r, params.hbar)]
    proj, _ = maxwellian_projection(params, r, warm=warm)
    coll_norms = [float(np.linalg.norm(proj - r)) / eps_like]
    sampled = {}
    if sample_times.size and np.isclose(sample_times[0], 0.0):
        sampled[0.0] = density_of(mesh, r)

    t = 0.0
    steps = 0
    while t < t_final - 1e-14:
        next_boundary = boundaries[np.searchsorted(boundaries, t + 1e-14)]
        dt_step = min(dt, next_boundary - t)
        if dt_step < controls.dt_min:
            raise IntegrationError("step size underflow", time=t,
                                   diagnostics={"dt": dt_step})
        steps += 1
        if steps > controls.max_steps:
            raise IntegrationError("step budget exhausted", time=t)

        if adaptive:
            k = [liouville_rhs(r, params, warm=warm)]
            for i in range(1, 7):
                stage = r + dt_step * sum(a * kk for a, kk in zip(DP_A[i], k))
                k.append(liouville_rhs(stage, params, warm=warm))
            r_new = stage  # stage 7 argument equals the 5th order solution
            err = dt_step * sum(e * kk for e, kk in zip(DP_ERR, k))
            scale = controls.tol * (1.0 + np.abs(r))
            ratio = float(np.max(np.abs(err) / scale))
            if ratio > 1.0:
                dt = max(next_step_size(dt_step, ratio), controls.dt_min)
                continue
            dt = min(next_step_size(dt_step, ratio), controls.dt_max)
        else:
            k1 = liouville_rhs(r, params, warm=warm)
            k2 = liouville_rhs(r + 0.5 * dt_step * k1, params, warm=warm)
            k3 = liouville_rhs(r + 0.5 * dt_step * k2, params, warm=warm)
            k4 = liouville_rhs(r + dt_step * k3, params, warm=warm)
            r_new = r + (dt_step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

        t += dt_step
        if abs(t - next_boundary) < 1e-12:
            t = next_boundary
        herm = float(np.linalg.norm(r_new - r_new.conj().T))
        r_new = 0.5 * (r_new + r_new.conj().T)
        tr = float(np.trace(r_new).real)
        trace_err = abs(tr - 1.0)
        r_new /= tr
        eigs = eigvalsh(r_new)
        lam_min = float(eigs.min())
        if lam_min < -controls.positivity_tol:
            raise IntegrationError(
                "positivity lost beyond tolerance", time=t,
                diagnostics={"min_eigenvalue": lam_min},
            )
        r = r_new

        proj, _ = maxwellian_projection(params, r, warm=warm)
        times.append(t)
        trace_errors.append(trace_err)
        herm_errors.append(herm)
        min_eigs.append(lam_min)
        energies.append(free_energy(mesh, r, params.hbar))
        coll_norms.append(float(np.linalg.norm(proj - r)) / eps_like)
        if controls.store_states:
            states.append(r.copy())
        hit = sample_times[np.isclose(sample_times, t, rtol=0.0, atol=1e-12)]
        for ts in hit:
            sampled[float(ts)] = density_of(mesh, r)

    ordered = np.array(sorted(sampled)) if sampled else np.empty(0)
    return LiouvilleTrajectory(
        params=params,
        times=np.asarray(times),
        trace_errors=np.asarray(trace_errors),
        hermiticity_errors=np.asarray(herm_errors),
        min_eigenvalues=np.asarray(min_eigs),
        free_energies=np.asarray(energies),
        collision_norms=np.asarray(coll_norms),
        sample_times=ordered,
        sample_densities=np.array([sampled[ts] for ts in ordered]) if sampled else np.empty((0, mesh.n_cells)),
        states=states,
    )


def double_commutator_diag(mesh: Mesh, matrix, hbar: float) -> np.ndarray:
    """Scaled diagonal of -(hbar^2/2) [Lap, [Lap, R]], as a density rate.

    On constrained-entropy states this equals the backward divergence of
    nu_plus times the forward difference of the potential, entrywise.
    """
    r = np.asarray(matrix)
    lap = laplacian_matrix(mesh)
    inner = lap @ r - r @ lap
    outer = lap @ inner - inner @ lap
    return -(hbar**2 / 2.0) * np.diag(outer).real / mesh.delta


def diffusive_limit_gap(
    mesh: Mesh,
    hbar: float,
    matrix0,
    eps_list: Sequence[float],
    t_grid: Sequence[float],
    reference_densities,
    controls: Optional[LiouvilleControls] = None,
):
    """Sup-norm gaps between rescaled diagonal dynamics and a reference flow.

    For each epsilon the rescaled equation is integrated from matrix0, the
    scaled diagonal is sampled on t_grid and compared against the reference
    densities (one row per grid time).  Returns a list of dicts with per-time
    gaps and the sup over the grid.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    reference = np.asarray(reference_densities, dtype=float)
    if reference.shape != (t_grid.size, mesh.n_cells):
        raise ValueError("reference densities must have one row per grid time")
    rows = []
    for eps in eps_list:
        params = LiouvilleParams(mesh=mesh, hbar=hbar, epsilon=float(eps))
        ctl = controls or LiouvilleControls()
        ctl = LiouvilleControls(
            cfl=ctl.cfl, tol=ctl.tol, dt_min=ctl.dt_min, dt_max=ctl.dt_max,
            store_states=False, sample_times=list(t_grid),
            positivity_tol=ctl.positivity_tol, max_steps=ctl.max_steps,
        )
        traj = integrate_liouville(matrix0, params, float(t_grid.max()), ctl)
        if traj.sample_times.size != t_grid.size:
            raise IntegrationError("integration missed sample times", time=None)
        gaps = np.max(np.abs(traj.sample_densities - reference), axis=1)
        rows.append({
            "epsilon": float(eps),
            "times": t_grid,
            "gaps": gaps,
            "sup_gap": float(gaps.max()),
        })
    return rows
