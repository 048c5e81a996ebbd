import json
import subprocess
import sys

import numpy as np
import pytest

from nlqdd import cli
from nlqdd.audit import check_constraint_satisfaction, run_property_audit
from nlqdd.grid import Mesh, integral
from nlqdd.maxwellian import partition_function, solve_potential
from nlqdd.presets import PRESET_NAMES, initial_density, preset_sampler


def run_cli(args, cwd):
    return subprocess.run([sys.executable, "-m", "nlqdd.cli", *args],
                          capture_output=True, text=True, cwd=cwd)


class TestPresets:
    @pytest.mark.parametrize("name", PRESET_NAMES)
    def test_unit_mass_and_positivity(self, name):
        for n_cells in (2, 16, 64):
            m = Mesh(n_cells)
            n = initial_density(m, name)
            assert np.all(n > 0.0)
            assert integral(m, n) == pytest.approx(1.0, abs=1e-13)

    def test_cosine_bump_values(self):
        m = Mesh(4)
        n = initial_density(m, "cosine-bump")
        expected = 1.0 + 0.5 * np.sinc(m.delta) * np.cos(2 * np.pi * m.sites)
        np.testing.assert_allclose(n, expected, atol=1e-9)

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            preset_sampler("bogus")

    def test_sample_file(self, tmp_path):
        m = Mesh(4)
        path = tmp_path / "density.txt"
        path.write_text("1.0\n2.0\n0.5\n0.5\n")
        n = initial_density(m, f"@{path}")
        assert integral(m, n) == pytest.approx(1.0, abs=1e-14)
        with pytest.raises(ValueError):
            initial_density(Mesh(8), f"@{path}")


class TestConfig:
    def test_key_value_parsing(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("n_cells = 8\nhbar=0.2  # comment\nepsilon=0.4,0.2\n\n")
        values = cli.read_config_file(str(cfg_file))
        assert values == {"n_cells": "8", "hbar": "0.2", "epsilon": "0.4,0.2"}

    def test_malformed_line(self, tmp_path):
        cfg_file = tmp_path / "bad.cfg"
        cfg_file.write_text("this is not a pair\n")
        with pytest.raises(cli.ConfigError):
            cli.read_config_file(str(cfg_file))

    def test_flag_overrides_file(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("n_cells=8\nhbar=0.2\n")
        parser = cli.build_parser()
        args = parser.parse_args(["maxwellian-solve", "--config", str(cfg_file),
                                  "--hbar", "0.3"])
        cfg = cli.resolve_config(args)
        assert cfg["n_cells"] == 8 and cfg["hbar"] == 0.3


class TestCommands:
    def test_maxwellian_solve_uniform(self, tmp_path):
        out = tmp_path / "run"
        code = cli.main(["maxwellian-solve", "--n-cells", "8", "--hbar", "0.1",
                         "--initial", "uniform", "--out", str(out)])
        assert code == 0
        lines = (out / "maxwellian_field.csv").read_text().splitlines()
        assert lines[0] == "t,xi,n,A,nu_plus"
        a_column = np.array([float(line.split(",")[3]) for line in lines[1:]])
        log_z = np.log(partition_function(Mesh(8), 0.1))
        np.testing.assert_allclose(a_column, -log_z, atol=1e-9)

    def test_malformed_config_writes_nothing(self, tmp_path):
        out = tmp_path / "none"
        code = cli.main(["maxwellian-solve", "--n-cells", "1", "--out", str(out)])
        assert code == 1
        assert not out.exists()

    def test_newton_tail_under_tolerance_tightening(self):
        m = Mesh(16)
        n = initial_density(m, "gaussian-mixture")
        loose = solve_potential(m, n, 0.1, tol=1e-6 * m.delta)
        tight = solve_potential(m, n, 0.1, tol=1e-12 * m.delta)
        assert tight.newton_iterations - loose.newton_iterations <= 3

    def test_nlqdd_run_ledger_and_determinism(self, tmp_path):
        args = ["nlqdd-run", "--n-cells", "8", "--hbar", "0.1", "--t-final", "0.02",
                "--initial", "cosine-bump"]
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert cli.main(args + ["--out", str(out1)]) == 0
        assert cli.main(args + ["--out", str(out2)]) == 0
        ledger1 = (out1 / "ledger.csv").read_bytes()
        assert ledger1 == (out2 / "ledger.csv").read_bytes()
        assert (out1 / "field.csv").read_bytes() == (out2 / "field.csv").read_bytes()
        lines = ledger1.decode().splitlines()
        assert lines[0] == "t,entropy,dissipation,mass,min_n,h1_norm,newton_iters"
        entropies = [float(line.split(",")[1]) for line in lines[1:]]
        assert all(e2 <= e1 + 1e-10 for e1, e2 in zip(entropies, entropies[1:]))
        masses = [float(line.split(",")[3]) for line in lines[1:]]
        assert max(abs(v - 1.0) for v in masses) <= 1e-9

    def test_uniform_run_constant_ledger(self, tmp_path):
        out = tmp_path / "u"
        assert cli.main(["nlqdd-run", "--n-cells", "8", "--t-final", "0.02",
                         "--initial", "uniform", "--out", str(out)]) == 0
        lines = (out / "ledger.csv").read_text().splitlines()[1:]
        entropies = [float(line.split(",")[1]) for line in lines]
        assert max(entropies) - min(entropies) <= 1e-10

    def test_liouville_run(self, tmp_path):
        out = tmp_path / "l"
        code = cli.main(["liouville-run", "--n-cells", "8", "--hbar", "0.1",
                         "--t-final", "0.05", "--epsilon", "0.5",
                         "--initial", "cosine-bump", "--out", str(out)])
        assert code == 0
        lines = (out / "liouville_ledger.csv").read_text().splitlines()
        assert lines[0] == "t,free_energy,collision_norm,trace_err,herm_err,min_eig"
        energies = [float(line.split(",")[1]) for line in lines[1:]]
        assert all(b <= a + 1e-8 for a, b in zip(energies, energies[1:]))

    def test_diffusive_limit_decreasing(self, tmp_path):
        out = tmp_path / "d"
        code = cli.main(["diffusive-limit", "--n-cells", "8", "--hbar", "0.1",
                         "--t-final", "0.1", "--epsilon", "0.4", "--epsilon", "0.2",
                         "--initial", "cosine-bump", "--out", str(out)])
        assert code == 0
        lines = (out / "gap_summary.csv").read_text().splitlines()[1:]
        sups = [float(line.split(",")[1]) for line in lines]
        assert sups[0] > sups[1]
        diag_lines = (out / "matrix_diag.csv").read_text().splitlines()
        assert diag_lines[0] == "t,xi,diag_R,n_ref,gap"
        gap_lines = (out / "gaps.csv").read_text().splitlines()[1:]
        t0_gaps = [float(line.split(",")[2]) for line in gap_lines
                   if float(line.split(",")[1]) == 0.0]
        assert max(t0_gaps) == 0.0

    def test_convergence_study(self, tmp_path):
        cfg_file = tmp_path / "study.cfg"
        cfg_file.write_text("n_list=8,16\nt_final=0.04\nhbar=0.1\ninitial=cosine-bump\n")
        out = tmp_path / "c"
        code = cli.main(["convergence-study", "--config", str(cfg_file), "--out", str(out)])
        assert code == 0
        lines = (out / "convergence.csv").read_text().splitlines()
        assert lines[0].startswith("N_coarse,N_fine,cauchy_sup")
        assert len(lines) == 2  # one pair row for (8, 16)
        assert (out / "ledger_N8.csv").exists() and (out / "ledger_N16.csv").exists()
        flux_lines = (out / "flux_identity.csv").read_text().splitlines()[1:]
        residuals = [float(line.split(",")[1]) for line in flux_lines]
        assert max(residuals) <= 1e-2  # centered-difference, integrator-order level

    def test_kernel_check(self, tmp_path):
        out = tmp_path / "k"
        code = cli.main(["kernel-check", "--out", str(out)])
        assert code == 0
        lines = (out / "kernel_errors.csv").read_text().splitlines()
        assert lines[0] == "N,t,err_pointwise,err_averaged,fitted_order"
        t1_rows = [line for line in lines[1:] if line.split(",")[1] == "1"]
        assert len(t1_rows) == 5  # one row per mesh at t = 1

    def test_exit_codes_as_subprocess(self, tmp_path):
        result = run_cli(["maxwellian-solve", "--n-cells", "1"], str(tmp_path))
        assert result.returncode == 1
        result = run_cli(["maxwellian-solve", "--n-cells", "4", "--initial", "uniform",
                          "--out", "ok"], str(tmp_path))
        assert result.returncode == 0
        assert result.stdout.startswith("entropy=")


class TestPropertyAudit:
    def test_quick_audit_passes(self, capsys):
        code = cli.cmd_property_audit({"seed": 0})
        out = capsys.readouterr().out
        report = json.loads(out)
        assert code == 0
        assert all(entry["passed"] for entry in report)
        names = {entry["name"] for entry in report}
        assert "klein_log_pairing" in names and "rhs_double_commutator" in names

    def test_corrupted_maxwellian_fails_constraint(self, rng):
        # negative control: perturbing the diagonal must break the constraint
        m = Mesh(8)
        from conftest import random_density

        n = random_density(rng, m)
        state = solve_potential(m, n, 0.1)
        corrupted = state.matrix.copy()
        corrupted[3, 3] += 1e-6
        gap = np.max(np.abs(np.diag(corrupted) - m.delta * n))
        assert gap > 100 * 1e-11 * np.max(m.delta * n)

    def test_audit_check_runs_standalone(self, rng):
        result = check_constraint_satisfaction(rng, trials=3)
        assert result.passed
