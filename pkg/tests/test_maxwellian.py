import numpy as np
import pytest

from nlqdd.grid import Mesh, cell_average, difference, integral, laplacian_matrix, lp_norm
from nlqdd.maxwellian import (
    MaxwellianState,
    SolverError,
    WarmStart,
    density_of,
    dual_jacobian,
    entropy,
    free_energy,
    free_energy_floor,
    log_mean_exp_weights,
    nu_coefficients,
    partition_function,
    quantum_exponential,
    solve_potential,
)
from conftest import random_density, random_density_matrix, random_smooth_potential


class TestQuantumExponential:
    def test_zero_potential_gives_partition_constant(self):
        for n, hbar in ((4, 0.3), (9, 0.7)):
            m = Mesh(n)
            dens, _ = quantum_exponential(m, np.zeros(n), hbar)
            np.testing.assert_allclose(dens, partition_function(m, hbar), rtol=1e-12)

    def test_hbar_zero_decouples(self, rng):
        m = Mesh(8)
        a = random_smooth_potential(rng, m)
        dens, mat = quantum_exponential(m, a, 0.0)
        np.testing.assert_allclose(dens, np.exp(a) / m.delta, rtol=1e-13)
        np.testing.assert_allclose(mat, np.diag(np.exp(a)), atol=1e-15)

    def test_scalar_shift_scales_density(self, rng):
        m = Mesh(8)
        a = random_smooth_potential(rng, m)
        base, _ = quantum_exponential(m, a, 0.2)
        shifted, _ = quantum_exponential(m, a + 0.7, 0.2)
        np.testing.assert_allclose(shifted, np.e**0.7 * base, rtol=1e-11)

    def test_always_strictly_positive(self, rng):
        for _ in range(20):
            m = Mesh(int(rng.choice([2, 4, 16])))
            dens, _ = quantum_exponential(m, random_smooth_potential(rng, m, amplitude=2.0), 0.3)
            assert np.all(dens > 0.0)


class TestSolvePotential:
    def test_uniform_density_gives_log_partition(self):
        m = Mesh(4)
        state = solve_potential(m, np.ones(4), 0.3)
        np.testing.assert_allclose(state.potential, -np.log(partition_function(m, 0.3)),
                                   atol=1e-10)

    def test_round_trip(self, rng):
        m = Mesh(32)
        a = random_smooth_potential(rng, m)
        dens, _ = quantum_exponential(m, a, 0.1)
        state = solve_potential(m, dens, 0.1)
        assert np.max(np.abs(state.potential - a)) <= 1e-9

    def test_hbar_zero_is_logarithm(self, rng):
        m = Mesh(8)
        n = random_density(rng, m)
        state = solve_potential(m, n, 0.0)
        np.testing.assert_allclose(state.potential, np.log(m.delta * n), atol=1e-12)

    def test_rejects_nonpositive_density(self):
        m = Mesh(4)
        with pytest.raises(ValueError):
            solve_potential(m, np.array([1.0, 0.0, 1.0, 2.0]), 0.1)

    def test_iteration_cap(self, rng):
        m = Mesh(16)
        n = random_density(rng, m)
        with pytest.raises(SolverError) as err:
            solve_potential(m, n, 0.1, max_iterations=1)
        assert err.value.residual is not None

    def test_constraint_satisfaction(self, rng):
        for _ in range(10):
            m = Mesh(int(rng.choice([2, 4, 8, 16])))
            n = random_density(rng, m)
            state = solve_potential(m, n, 0.15)
            gap = np.max(np.abs(np.diag(state.matrix) - m.delta * n))
            assert gap <= 1e-11 * np.max(m.delta * n)

    def test_warm_start_converges_faster(self, rng):
        m = Mesh(16)
        n = random_density(rng, m)
        warm = WarmStart()
        cold = solve_potential(m, n, 0.1, warm=warm)
        bumped = n * (1 + 1e-6 * rng.standard_normal(16))
        bumped /= integral(m, bumped)
        again = solve_potential(m, bumped, 0.1, warm=warm)
        assert again.newton_iterations <= cold.newton_iterations
        assert again.newton_iterations <= 3

    def test_unnormalized_densities_allowed(self, rng):
        m = Mesh(8)
        n = 2.5 * random_density(rng, m)
        state = solve_potential(m, n, 0.2)
        got, _ = quantum_exponential(m, state.potential, 0.2)
        np.testing.assert_allclose(got, n, rtol=1e-9)

    def test_stale_warm_start_recovers(self, rng):
        # a warm start from a wildly different target must not derail the solve
        m = Mesh(8)
        warm = WarmStart()
        solve_potential(m, random_density(rng, m), 0.1, warm=warm)
        far = np.exp(40.0 * rng.standard_normal(8))
        far /= integral(m, far)
        state = solve_potential(m, far, 0.1, warm=warm)
        assert state.residual <= 1e-11 * np.max(m.delta * far)


class TestDualJacobian:
    def test_matches_central_differences(self, rng):
        m = Mesh(8)
        step = 1e-5
        for _ in range(3):
            a = random_smooth_potential(rng, m)
            jac = dual_jacobian(m, a, 0.2)
            fd = np.zeros((8, 8))
            for j in range(8):
                e = np.zeros(8)
                e[j] = step
                plus, _ = quantum_exponential(m, a + e, 0.2)
                minus, _ = quantum_exponential(m, a - e, 0.2)
                fd[:, j] = m.delta * (plus - minus) / (2 * step)
            assert np.linalg.norm(jac - fd) <= 1e-6 * np.linalg.norm(fd)

    def test_positive_definite(self, rng):
        for _ in range(100):
            m = Mesh(int(rng.choice([2, 4, 8, 16])))
            a = random_smooth_potential(rng, m, amplitude=1.5)
            jac = dual_jacobian(m, a, 0.15)
            assert np.linalg.eigvalsh(jac).min() > 0.0

    def test_hbar_zero_is_diagonal_exponential(self, rng):
        m = Mesh(8)
        a = random_smooth_potential(rng, m)
        np.testing.assert_allclose(dual_jacobian(m, a, 0.0), np.diag(np.exp(a)), atol=1e-14)

    def test_log_mean_weights_stability(self):
        # near-degenerate pairs agree with the midpoint exponential
        lam = np.array([0.3, 0.3 + 3e-9, -1.0])
        w = log_mean_exp_weights(lam)
        assert w[0, 1] == pytest.approx(np.exp(0.3 + 1.5e-9), rel=1e-13)
        exact = (np.exp(0.3) - np.exp(-1.0)) / 1.3
        assert w[0, 2] == pytest.approx(exact, rel=1e-13)
        assert np.all(w > 0.0)


class TestFreeEnergyAndEntropy:
    def test_scaled_identity_value(self):
        m = Mesh(4)
        hbar = 0.3
        value = free_energy(m, np.eye(4) / 4.0, hbar)
        assert value == pytest.approx(-np.log(4.0) + 2.0 * hbar**2 / m.delta**2, rel=1e-13)

    def test_uniform_maxwellian_value(self):
        m = Mesh(4)
        state = solve_potential(m, np.ones(4), 0.3)
        z = partition_function(m, 0.3)
        assert free_energy(m, state.matrix, 0.3) == pytest.approx(-np.log(z), abs=1e-10)

    def test_floor_on_random_density_matrices(self, rng):
        for _ in range(50):
            m = Mesh(int(rng.choice([2, 4, 8])))
            hbar = float(rng.choice([0.05, 0.1, 0.5]))
            r = random_density_matrix(rng, m.n_cells)
            assert free_energy(m, r, hbar) >= free_energy_floor(hbar**2) - 1e-12

    def test_rejects_non_hermitian(self, rng):
        m = Mesh(4)
        r = rng.standard_normal((4, 4))
        with pytest.raises(ValueError):
            free_energy(m, r + 0.1, 0.1)

    def test_entropy_equals_free_energy_of_state(self, rng):
        m = Mesh(16)
        state = solve_potential(m, random_density(rng, m), 0.1)
        assert entropy(state) == pytest.approx(state.entropy, abs=1e-15)
        assert abs(entropy(state) - free_energy(m, state.matrix, 0.1)) <= 1e-9

    def test_entropy_floor_on_solved_states(self, rng):
        for _ in range(30):
            m = Mesh(int(rng.choice([4, 8, 16])))
            hbar = float(rng.choice([0.05, 0.1, 0.5]))
            state = solve_potential(m, random_density(rng, m), hbar)
            assert state.entropy >= free_energy_floor(hbar**2) - 1e-12

    def test_gradient_bound_by_free_energy_gap(self, rng):
        # -tr(Lap M) <= (2/hbar^2) (free energy - floor at half coefficient)
        m = Mesh(16)
        hbar = 0.1
        state = solve_potential(m, random_density(rng, m), hbar)
        lhs = -np.trace(laplacian_matrix(m) @ state.matrix)
        gap = free_energy(m, state.matrix, hbar) - free_energy_floor(hbar**2 / 2.0)
        assert lhs <= 2.0 / hbar**2 * gap + 1e-10


class TestPotentialBounds:
    def test_log_partition_between_extremes_and_upper_bound(self, rng):
        for _ in range(30):
            m = Mesh(int(rng.choice([4, 8, 16])))
            hbar = float(rng.choice([0.05, 0.1, 0.5]))
            state = solve_potential(m, random_density(rng, m), hbar)
            log_z = np.log(partition_function(m, hbar))
            assert state.potential.min() <= -log_z + 1e-10
            assert state.potential.max() >= -log_z - 1e-10
            assert state.potential.max() <= 2.0 * (hbar / m.delta) ** 2 + 1e-10


class TestNuCoefficients:
    def test_uniform_circulant_value(self):
        from nlqdd.grid import frequency_window, laplacian_eigenvalues

        m = Mesh(4)
        hbar = 0.1
        state = solve_potential(m, np.ones(4), hbar)
        k = frequency_window(4)
        damp = np.exp(-hbar**2 * laplacian_eigenvalues(m, k))
        z = damp.sum()
        expected = float((damp * np.exp(-2j * np.pi * k * m.delta)).sum().real / (4 * m.delta * z))
        np.testing.assert_allclose(state.nu_plus, expected, rtol=1e-9)

    def test_positivity_and_scaled_sums(self, rng):
        for _ in range(40):
            m = Mesh(int(rng.choice([4, 8, 16, 32])))
            state = solve_potential(m, random_density(rng, m), 0.1)
            assert state.nu_plus.min() > 0.0
            assert state.nu_minus.min() > 0.0
            assert integral(m, state.nu_plus) <= 1.0 + 1e-12
            assert integral(m, state.nu_minus) <= 1.0 + 1e-12

    def test_backward_is_shifted_forward(self, rng):
        m = Mesh(8)
        state = solve_potential(m, random_density(rng, m), 0.2)
        np.testing.assert_allclose(np.roll(state.nu_plus, 1), state.nu_minus, rtol=1e-12)

    def test_hbar_zero_vanishes(self, rng):
        m = Mesh(8)
        _, mat = quantum_exponential(m, random_smooth_potential(rng, m), 0.0)
        nu_plus, nu_minus = nu_coefficients(m, mat)
        assert np.all(nu_plus == 0.0) and np.all(nu_minus == 0.0)

    def test_offdiagonal_proximity_order(self):
        # sup |nu_plus - n| decays in delta with fitted order >= 0.5
        sampler = lambda x: 1.0 + 0.5 * np.cos(2 * np.pi * x)
        errs = []
        sizes = (16, 32, 64, 128)
        for n_cells in sizes:
            m = Mesh(n_cells)
            n = cell_average(m, sampler)
            n /= integral(m, n)
            state = solve_potential(m, n, 0.1)
            errs.append(float(np.max(np.abs(state.nu_plus - n))))
        assert all(errs[i + 1] < errs[i] for i in range(len(errs) - 1))
        order = np.polyfit(np.log([1.0 / s for s in sizes]), np.log(errs), 1)[0]
        assert order >= 0.5


class TestDensityOf:
    def test_scaled_identity(self):
        m = Mesh(4)
        np.testing.assert_allclose(density_of(m, np.eye(4) / 4.0), np.ones(4), rtol=1e-14)

    def test_unit_mass_from_unit_trace(self, rng):
        m = Mesh(8)
        r = random_density_matrix(rng, 8)
        assert integral(m, density_of(m, r)) == pytest.approx(1.0, abs=1e-12)

    def test_uniform_maxwellian(self):
        m = Mesh(6)
        state = solve_potential(m, np.ones(6), 0.2)
        np.testing.assert_allclose(density_of(m, state.matrix), np.ones(6), atol=1e-9)

    def test_rejects_nonpositive_diagonal(self):
        m = Mesh(4)
        bad = np.diag([0.5, 0.5, 0.0, 0.0])
        with pytest.raises(ValueError):
            density_of(m, bad)


class TestSpectralRepresentation:
    def test_orthonormality_and_reconstruction(self, rng):
        m = Mesh(16)
        state = solve_potential(m, random_density(rng, m), 0.1)
        vec = state.spectral.eigenvectors
        assert np.linalg.norm(vec.T @ vec - np.eye(16)) <= 1e-10
        lam = state.spectral.eigenvalues
        assert np.all(np.diff(lam) >= 0.0)
        rebuilt = (vec * np.exp(lam)) @ vec.T
        assert (np.linalg.norm(rebuilt - state.matrix)
                <= 1e-10 * np.linalg.norm(state.matrix))

    def test_density_from_eigenfunctions(self, rng):
        # n(xi) = sum_k rho_k phi_k(xi)^2 with scaled eigenfunctions
        m = Mesh(16)
        state = solve_potential(m, random_density(rng, m), 0.1)
        phi = state.spectral.site_eigenfunctions(m)
        rho = state.spectral.maxwellian_weights()
        rebuilt = (phi**2) @ rho
        np.testing.assert_allclose(rebuilt, state.density, rtol=1e-8)

    def test_weighted_gradient_bound(self, rng):
        # sum_k rho_k ||D+ phi_k||^2 <= (2/hbar^2)(H(n) - floor at half coefficient)
        m = Mesh(16)
        hbar = 0.1
        state = solve_potential(m, random_density(rng, m), hbar)
        phi = state.spectral.site_eigenfunctions(m)
        rho = state.spectral.maxwellian_weights()
        total = sum(rho[k] * lp_norm(m, difference(m, phi[:, k], "forward"), 2) ** 2
                    for k in range(m.n_cells))
        bound = 2.0 / hbar**2 * (state.entropy - free_energy_floor(hbar**2 / 2.0))
        assert total <= bound + 1e-9


class TestMonotonicity:
    def test_exponential_map_monotone(self, rng):
        for _ in range(50):
            m = Mesh(int(rng.choice([4, 8])))
            a = random_smooth_potential(rng, m)
            b = random_smooth_potential(rng, m)
            na, _ = quantum_exponential(m, a, 0.2)
            nb, _ = quantum_exponential(m, b, 0.2)
            assert integral(m, (na - nb) * (a - b)) >= -1e-12
