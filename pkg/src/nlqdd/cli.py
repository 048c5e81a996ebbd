"""Command-line harness: runs the desk-scale experiments and emits CSV.

Subcommands: maxwellian-solve, nlqdd-run, liouville-run, diffusive-limit,
convergence-study, kernel-check, property-audit.  Configuration comes from
plain key=value files plus flag overrides; identical config and seed give
byte-identical outputs.  Exit codes: 0 ok, 1 config error, 2 solver failure,
3 integrator failure, 4 acceptance failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import audit, dynamics, kernels, liouville, presets
from .grid import Mesh, difference, hat_and_flux_interpolants
from .maxwellian import SolverError, partition_function, solve_potential

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_INTEGRATOR = 3
EXIT_ACCEPTANCE = 4

LEDGER_HEADER = ["t", "entropy", "dissipation", "mass", "min_n", "h1_norm", "newton_iters"]
FIELD_HEADER = ["t", "xi", "n", "A", "nu_plus"]
MATRIX_DIAG_HEADER = ["t", "xi", "diag_R", "n_ref", "gap"]
KERNEL_ERROR_HEADER = ["N", "t", "err_pointwise", "err_averaged", "fitted_order"]


class ConfigError(ValueError):
    pass


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


def read_config_file(path: str) -> dict:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        values[key.strip().replace("-", "_")] = val.strip()
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nlqdd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=str, default=None)
        p.add_argument("--n-cells", type=int, default=None)
        p.add_argument("--hbar", type=float, default=None)
        p.add_argument("--t-final", type=float, default=None)
        p.add_argument("--epsilon", type=float, action="append", default=None)
        p.add_argument("--initial", type=str, default=None)
        p.add_argument("--out", type=str, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--tol", type=float, default=None)

    for name in ("maxwellian-solve", "nlqdd-run", "liouville-run", "diffusive-limit",
                 "convergence-study", "kernel-check", "property-audit"):
        common(sub.add_parser(name))
    return parser


DEFAULTS = {
    "n_cells": 32,
    "hbar": 0.1,
    "t_final": 0.5,
    "epsilon": [0.4, 0.2, 0.1],
    "initial": "cosine-bump",
    "out": "out",
    "seed": 0,
    "tol": None,
    "n_list": [16, 32, 64],
    "t_values": [0.05, 0.1, 0.25, 0.5, 1.0],
    "kernel_hbar": 0.5,
    "cfl": 0.1,
}


def resolve_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        raw = read_config_file(args.config)
        for key, val in raw.items():
            if key in ("n_cells", "seed"):
                cfg[key] = int(val)
            elif key in ("hbar", "t_final", "tol", "kernel_hbar", "cfl"):
                cfg[key] = float(val)
            elif key == "epsilon":
                cfg[key] = [float(v) for v in val.split(",")]
            elif key == "n_list":
                cfg[key] = [int(v) for v in val.split(",")]
            elif key == "t_values":
                cfg[key] = [float(v) for v in val.split(",")]
            elif key in ("initial", "out"):
                cfg[key] = val
            else:
                raise ConfigError(f"unknown config key {key!r}")
    for key in ("n_cells", "hbar", "t_final", "initial", "out", "seed", "tol"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if args.epsilon:
        cfg["epsilon"] = list(args.epsilon)
    if cfg["n_cells"] < 2:
        raise ConfigError("n_cells must be at least 2")
    if cfg["hbar"] <= 0:
        raise ConfigError("hbar must be positive")
    if cfg["t_final"] < 0:
        raise ConfigError("t_final must be non-negative")
    if any(e <= 0 for e in cfg["epsilon"]):
        raise ConfigError("epsilon values must be positive")
    return cfg


def _field_rows(mesh, t, n, a, nu_plus):
    return [(t, xi, n[j], a[j], nu_plus[j]) for j, xi in enumerate(mesh.sites)]


def cmd_maxwellian_solve(cfg) -> int:
    mesh = Mesh(cfg["n_cells"])
    n = presets.initial_density(mesh, cfg["initial"])
    try:
        state = solve_potential(mesh, n, cfg["hbar"], tol=cfg["tol"])
    except SolverError as exc:
        print(f"solver failure: {exc} (residual={exc.residual})", file=sys.stderr)
        return EXIT_SOLVER
    out = Path(cfg["out"])
    write_csv(out / "maxwellian_field.csv", FIELD_HEADER,
              _field_rows(mesh, 0.0, state.density, state.potential, state.nu_plus))
    print(f"entropy={_fmt(state.entropy)}")
    print(f"residual={_fmt(state.residual)} newton_iterations={state.newton_iterations}")
    print(f"log_partition={_fmt(np.log(partition_function(mesh, cfg['hbar'])))}")
    return EXIT_OK


def _ledger_rows(record):
    return [
        (record.times[i], record.entropies[i], record.dissipations[i], record.masses[i],
         record.min_densities[i], record.h1_norms[i], int(record.newton_iterations[i]))
        for i in range(record.times.size)
    ]


def cmd_nlqdd_run(cfg) -> int:
    mesh = Mesh(cfg["n_cells"])
    n0 = presets.initial_density(mesh, cfg["initial"])
    sample_times = [k * cfg["t_final"] / 10.0 for k in range(1, 11)] if cfg["t_final"] > 0 else []
    controls = dynamics.NlqddControls(tol=cfg["tol"] or 1e-8, sample_times=sample_times)
    try:
        record = dynamics.integrate_nlqdd(mesh, n0, cfg["hbar"], cfg["t_final"], controls)
    except liouville.IntegrationError as exc:
        print(f"integrator failure at t={exc.time}: {exc} {exc.diagnostics}", file=sys.stderr)
        return EXIT_INTEGRATOR
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    out = Path(cfg["out"])
    write_csv(out / "ledger.csv", LEDGER_HEADER, _ledger_rows(record))
    field_rows = []
    warm_times = [0.0] + list(sample_times)
    for t in warm_times:
        idx = np.flatnonzero(np.isclose(record.times, t, rtol=0.0, atol=1e-12))
        if idx.size == 0:
            continue
        i = int(idx[0])
        state = solve_potential(mesh, record.densities[i], cfg["hbar"])
        field_rows.extend(_field_rows(mesh, record.times[i], record.densities[i],
                                      state.potential, state.nu_plus))
    write_csv(out / "field.csv", FIELD_HEADER, field_rows)
    print(f"steps={record.times.size - 1} final_entropy={_fmt(record.entropies[-1])}")
    return EXIT_OK


def _blended_initial_matrix(mesh, hbar, density):
    """Positive definite initial state with the preset diagonal but an
    off-Maxwellian component, to exercise the initial relaxation layer."""
    state = solve_potential(mesh, density, hbar)
    return (0.5 * state.matrix + 0.5 * np.diag(mesh.delta * density)).astype(complex)


def cmd_liouville_run(cfg) -> int:
    mesh = Mesh(cfg["n_cells"])
    n0 = presets.initial_density(mesh, cfg["initial"])
    eps = cfg["epsilon"][0]
    params = liouville.LiouvilleParams(mesh=mesh, hbar=cfg["hbar"], epsilon=eps)
    r0 = _blended_initial_matrix(mesh, cfg["hbar"], n0)
    controls = liouville.LiouvilleControls(cfl=cfg["cfl"])
    try:
        traj = liouville.integrate_liouville(r0, params, cfg["t_final"], controls)
    except liouville.IntegrationError as exc:
        print(f"integrator failure at t={exc.time}: {exc}", file=sys.stderr)
        return EXIT_INTEGRATOR
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    out = Path(cfg["out"])
    rows = [(traj.times[i], traj.free_energies[i], traj.collision_norms[i],
             traj.trace_errors[i], traj.hermiticity_errors[i], traj.min_eigenvalues[i])
            for i in range(traj.times.size)]
    write_csv(out / "liouville_ledger.csv",
              ["t", "free_energy", "collision_norm", "trace_err", "herm_err", "min_eig"], rows)
    print(f"steps={traj.times.size - 1} final_free_energy={_fmt(traj.free_energies[-1])}")
    return EXIT_OK


def cmd_diffusive_limit(cfg) -> int:
    mesh = Mesh(cfg["n_cells"])
    hbar = cfg["hbar"]
    eps_list = sorted(cfg["epsilon"], reverse=True)
    t_final = cfg["t_final"]
    t_grid = np.linspace(0.0, t_final, 6)
    n0 = presets.initial_density(mesh, cfg["initial"])
    r0 = _blended_initial_matrix(mesh, hbar, n0)
    from .maxwellian import density_of

    n_ref0 = density_of(mesh, r0)  # exact shared initial diagonal
    controls = dynamics.NlqddControls(tol=1e-10, sample_times=list(t_grid[1:]))
    try:
        record = dynamics.integrate_nlqdd(mesh, n_ref0, hbar, t_final, controls)
        reference = np.array([record.density_at(t) for t in t_grid])
        rows = liouville.diffusive_limit_gap(mesh, hbar, r0, eps_list, t_grid, reference)
    except liouville.IntegrationError as exc:
        print(f"integrator failure at t={exc.time}: {exc}", file=sys.stderr)
        return EXIT_INTEGRATOR
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    out = Path(cfg["out"])
    gap_rows = []
    diag_rows = []
    for row in rows:
        for t, gap in zip(row["times"], row["gaps"]):
            gap_rows.append((row["epsilon"], t, gap))
    write_csv(out / "gaps.csv", ["epsilon", "t", "gap"], gap_rows)
    write_csv(out / "gap_summary.csv", ["epsilon", "sup_gap"],
              [(row["epsilon"], row["sup_gap"]) for row in rows])
    # per-site diagnostics for the smallest epsilon at the final time
    params = liouville.LiouvilleParams(mesh=mesh, hbar=hbar, epsilon=eps_list[-1])
    traj = liouville.integrate_liouville(
        r0, params, t_final,
        liouville.LiouvilleControls(sample_times=[t_final], store_states=False))
    n_eps = traj.sample_densities[-1]
    n_ref = reference[-1]
    for j, xi in enumerate(mesh.sites):
        diag_rows.append((t_final, xi, mesh.delta * n_eps[j], n_ref[j],
                          abs(n_eps[j] - n_ref[j])))
    write_csv(out / "matrix_diag.csv", MATRIX_DIAG_HEADER, diag_rows)
    sups = [row["sup_gap"] for row in rows]
    print("sup_gaps=" + ",".join(_fmt(s) for s in sups))
    return EXIT_OK


def cmd_convergence_study(cfg) -> int:
    hbar = cfg["hbar"]
    t_final = cfg["t_final"]
    n_list = sorted(cfg["n_list"])
    sampler = presets.preset_sampler(cfg["initial"]) if not cfg["initial"].startswith("@") else None
    if sampler is None:
        print("convergence study needs an analytic preset", file=sys.stderr)
        return EXIT_CONFIG
    probe_times = np.linspace(0.0, t_final, 5)
    probe_x = np.linspace(0.0, 1.0, 257, endpoint=False)
    records = {}
    out = Path(cfg["out"])
    for n_cells in n_list:
        mesh = Mesh(n_cells)
        n0 = presets.initial_density(mesh, cfg["initial"])
        controls = dynamics.NlqddControls(tol=cfg["tol"] or 1e-9,
                                          sample_times=list(probe_times[1:]))
        try:
            record = dynamics.integrate_nlqdd(mesh, n0, hbar, t_final, controls)
        except (liouville.IntegrationError, SolverError) as exc:
            print(f"N={n_cells}: failed ({exc})", file=sys.stderr)
            records[n_cells] = None
            continue
        records[n_cells] = record
        write_csv(out / f"ledger_N{n_cells}.csv", LEDGER_HEADER, _ledger_rows(record))

    rows = []
    flux_rows = []
    for n_coarse, n_fine in zip(n_list[:-1], n_list[1:]):
        rc, rf = records.get(n_coarse), records.get(n_fine)
        if rc is None or rf is None:
            continue
        sup = 0.0
        for t in probe_times:
            nc = rc.density_at(t)
            nf = rf.density_at(t)
            hat_c, _ = hat_and_flux_interpolants(Mesh(n_coarse), nc, np.zeros(n_coarse))
            hat_f, _ = hat_and_flux_interpolants(Mesh(n_fine), nf, np.zeros(n_fine))
            sup = max(sup, float(np.max(np.abs(hat_c(probe_x) - hat_f(probe_x)))))
        rows.append((n_coarse, n_fine, sup,
                     float(rc.h1_norms.max()), float(rf.h1_norms.max()),
                     rc.entropies[0], rf.entropies[0]))
    for n_cells in n_list:
        record = records.get(n_cells)
        if record is None:
            continue
        mesh = Mesh(n_cells)
        residual = _flux_identity_residual(mesh, record, hbar, probe_x)
        flux_rows.append((n_cells, residual))
    write_csv(out / "convergence.csv",
              ["N_coarse", "N_fine", "cauchy_sup", "h1_max_coarse", "h1_max_fine",
               "entropy0_coarse", "entropy0_fine"], rows)
    write_csv(out / "flux_identity.csv", ["N", "residual"], flux_rows)
    if rows:
        print("cauchy_sups=" + ",".join(_fmt(r[2]) for r in rows))
    return EXIT_OK


def _flux_identity_residual(mesh, record, hbar, probe_x):
    """Centered time difference of the hat interpolant against the x-derivative
    of the bump flux interpolant, at the midpoint record."""
    mid = record.times.size // 2
    if mid == 0 or mid + 1 >= record.times.size:
        return 0.0
    t_minus, t_mid, t_plus = record.times[mid - 1: mid + 2]
    hat_minus, _ = hat_and_flux_interpolants(mesh, record.densities[mid - 1], np.zeros(mesh.n_cells))
    hat_plus, _ = hat_and_flux_interpolants(mesh, record.densities[mid + 1], np.zeros(mesh.n_cells))
    state = solve_potential(mesh, record.densities[mid], hbar)
    flux = state.nu_plus * difference(mesh, state.potential, "forward")
    # d/dx of the bump interpolant of the flux is the hat interpolant of the
    # backward divergence, so evaluate that directly.
    rate = difference(mesh, flux, "backward")
    hat_rate, _ = hat_and_flux_interpolants(mesh, rate, np.zeros(mesh.n_cells))
    dt = t_plus - t_minus
    lhs = (hat_plus(probe_x) - hat_minus(probe_x)) / dt
    return float(np.max(np.abs(lhs - hat_rate(probe_x))))


def cmd_kernel_check(cfg) -> int:
    params = kernels.HeatKernelParams(hbar=cfg["kernel_hbar"])
    n_list = [8, 16, 32, 64, 128]
    report = kernels.kernel_error_report(n_list, cfg["t_values"], params)
    rows = []
    for r in report.rows:
        order = report.fitted_orders[r["t"]][0]
        rows.append((r["N"], r["t"], r["err_pointwise"], r["err_averaged"], order))
    write_csv(Path(cfg["out"]) / "kernel_errors.csv", KERNEL_ERROR_HEADER, rows)
    orders = report.fitted_orders[1.0] if 1.0 in report.fitted_orders else \
        report.fitted_orders[max(report.fitted_orders)]
    print(f"fitted_orders pointwise={_fmt(orders[0])} averaged={_fmt(orders[1])}")
    if orders[0] < 0.25 or orders[1] < 0.25:
        print("fitted order below 0.25", file=sys.stderr)
        return EXIT_ACCEPTANCE
    return EXIT_OK


def cmd_property_audit(cfg) -> int:
    results = audit.run_property_audit(seed=cfg["seed"])
    report = [
        {"name": r.name, "passed": bool(r.passed), "worst_margin": float(r.worst_margin),
         "detail": r.detail}
        for r in results
    ]
    print(json.dumps(report, indent=2, sort_keys=True))
    if not all(r.passed for r in results):
        return EXIT_ACCEPTANCE
    return EXIT_OK


COMMANDS = {
    "maxwellian-solve": cmd_maxwellian_solve,
    "nlqdd-run": cmd_nlqdd_run,
    "liouville-run": cmd_liouville_run,
    "diffusive-limit": cmd_diffusive_limit,
    "convergence-study": cmd_convergence_study,
    "kernel-check": cmd_kernel_check,
    "property-audit": cmd_property_audit,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        mesh_probe = Mesh(cfg["n_cells"])
        if cfg["initial"].startswith("@"):
            presets.initial_density(mesh_probe, cfg["initial"])
        elif cfg["initial"] not in presets.PRESET_NAMES:
            raise ConfigError(f"unknown preset {cfg['initial']!r}")
    except (ConfigError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return COMMANDS[args.command](cfg)


if __name__ == "__main__":
    sys.exit(main())
