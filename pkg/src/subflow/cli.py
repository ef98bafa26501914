"""Command-line entry point.

Subcommands (all take a YAML run configuration):

  check-gas  gas-law admissibility report for the configured psi range
  solve      single solve at flow.q_infinity; writes report + history + fields
  sweep      continuation table over continuation.q_list
  critical   theta-schedule bisection for the critical-speed estimate
  limit      approach-to-critical sequence and its diagnostics
  verify     run the property checks on the configured problem
  export     solve and export fields (vtk + csv)

Exit codes: 0 success, 1 numerical failure, 2 usage or configuration error.
The environment variable SUBFLOW_NUM_THREADS caps the numerical thread
pools (it must be set before numpy loads, so the CLI applies it first).
"""

from __future__ import annotations

import argparse
import os
import sys

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _apply_thread_env():
    n = os.environ.get("SUBFLOW_NUM_THREADS")
    if n:
        for var in _THREAD_VARS:
            os.environ.setdefault(var, n)


def _fmt(x):
    return f"{float(x):.17g}"


def _write_history_csv(report, path):
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "energy", "gradient_norm", "step_length"])
        for it, energy, gnorm, step in report.history:
            writer.writerow([it, _fmt(energy), _fmt(gnorm), _fmt(step)])


def _write_report_yaml(report, path, extra=None):
    import yaml

    payload = {
        "iterations": report.iterations,
        "converged": bool(report.converged),
        "grad_norm": float(report.grad_norm),
        "energy": float(report.energy),
        "functional_value": float(report.functional_value),
        "max_speed": float(report.max_speed),
        "max_mach_ratio": float(report.max_mach_ratio),
        "cutoff_active_cells": int(report.cutoff_active_cells),
        "cg_iterations": int(report.cg_iterations),
        "wall_time": float(report.wall_time),
    }
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        yaml.safe_dump(payload, fh, sort_keys=False)


def _cmd_check_gas(cfg):
    from . import gas

    law = cfg.build_gas()
    check = cfg.section("check")
    if "psi_range" in check and check["psi_range"] is not None:
        lo, hi = (float(x) for x in check["psi_range"])
    else:
        mesh = cfg.build_mesh()
        force = cfg.build_force(mesh.dimension)
        from . import forces as forces_mod

        lo, hi = forces_mod.psi_range(force, mesh)
    report = gas.check_admissible(law, lo, hi)
    print(f"admissible band: ({_fmt(report.band[0])}, {_fmt(report.band[1])})")
    print(f"psi range:       [{_fmt(lo)}, {_fmt(hi)}]")
    print(f"margins:         {_fmt(report.margin_low)} / {_fmt(report.margin_high)}")
    for psi in (lo, hi):
        print(f"q_cr({_fmt(psi)}) = {_fmt(gas.critical_speed(law, psi))}")
    return 0


def _solve_once(cfg):
    problem = cfg.build_problem()
    state, report = problem.solve(cfg.q_infinity, cfg.theta)
    return problem, state, report


def _cmd_solve(cfg):
    from . import vtk_io

    outdir = cfg.output_dir
    os.makedirs(outdir, exist_ok=True)
    problem, state, report = _solve_once(cfg)
    cut = problem.cutoff_for(cfg.theta)
    _write_history_csv(report, os.path.join(outdir, "history.csv"))
    _write_report_yaml(report, os.path.join(outdir, "report.yaml"))
    vtk_io.export_vtk(state, cut, problem.force, os.path.join(outdir, "fields.vtk"))
    vtk_io.export_csv(state, cut, problem.force, os.path.join(outdir, "fields.csv"))
    print(
        f"solved q_infinity={_fmt(cfg.q_infinity)}: {report.iterations} iterations, "
        f"gradient norm {_fmt(report.grad_norm)}, energy {_fmt(report.energy)}"
    )
    return 0


def _cmd_export(cfg):
    return _cmd_solve(cfg)


def _cmd_sweep(cfg):
    from . import continuation

    outdir = cfg.output_dir
    os.makedirs(outdir, exist_ok=True)
    from .errors import ConfigError

    problem = cfg.build_problem()
    q_list = cfg.section("continuation").get("q_list")
    if not q_list:
        raise ConfigError("continuation.q_list is required for sweep")
    records = continuation.sweep([float(q) for q in q_list], cfg.theta, problem)
    path = os.path.join(outdir, "sweep.csv")
    continuation.write_continuation_csv(records, path)
    for rec in records:
        print(
            f"q={_fmt(rec.q_infinity)} ratio={_fmt(rec.max_mach_ratio)} "
            f"certified={int(rec.certified)}"
        )
    print(f"wrote {path}")
    return 0


def _cmd_critical(cfg):
    import yaml

    from . import continuation

    outdir = cfg.output_dir
    os.makedirs(outdir, exist_ok=True)
    problem = cfg.build_problem()
    cont = cfg.section("continuation")
    tol_q = cont.get("tol_q")
    cap_factor = float(cont.get("q_cap_factor") or 1.5)
    from . import gas

    q_cap = cap_factor * float(gas.sound_speed(problem.law, 1.0))
    search = continuation.critical_qhat(
        cfg.theta_schedule, tol_q, problem, q_cap=q_cap
    )
    continuation.write_continuation_csv(
        search.records, os.path.join(outdir, "critical.csv")
    )
    mesh_sec = cfg.section("mesh")
    summary = {
        "q_hat_estimate": float(search.q_hat),
        "capped": bool(search.capped),
        "q_cap": float(search.q_cap),
        "tol_q": float(search.tol_q),
        "monotone": bool(search.monotone),
        "per_theta": [
            {"theta": t, "certified_supremum": s, "hit_cap": bool(c)}
            for t, s, c in search.per_theta
        ],
        "mesh": {k: mesh_sec.get(k) for k in sorted(mesh_sec)},
        "note": "mesh- and truncation-dependent estimate, not the continuum value",
    }
    with open(os.path.join(outdir, "critical_summary.yaml"), "w") as fh:
        yaml.safe_dump(summary, fh, sort_keys=False)
    print(f"critical-speed estimate: {_fmt(search.q_hat)} (capped={int(search.capped)})")
    return 0


def _cmd_limit(cfg):
    from . import continuation, sonic

    outdir = cfg.output_dir
    os.makedirs(outdir, exist_ok=True)
    problem = cfg.build_problem()
    limit_sec = cfg.section("limit")
    q_hat = limit_sec.get("q_hat")
    theta = cfg.theta_schedule[-1]
    if q_hat is None:
        search = continuation.critical_qhat(cfg.theta_schedule, None, problem)
        q_hat = search.q_hat
    seq = sonic.build_sequence(
        float(q_hat), int(limit_sec.get("n_steps") or 4), problem, theta
    )
    path = os.path.join(outdir, "limit.csv")
    sonic.write_limit_csv(seq, problem.law, problem.force, path)
    with open(os.path.join(outdir, "limit_report.txt"), "w") as fh:
        fh.write(f"critical-speed estimate used: {_fmt(q_hat)}\n")
        fh.write(f"members: {', '.join(_fmt(q) for q in seq.q_values)}\n")
        fh.write(f"capped members: {', '.join(_fmt(q) for q in seq.capped_members) or 'none'}\n")
        fh.write(sonic.GAP_STATEMENT + "\n")
    print(f"wrote {path}")
    return 0


def _cmd_verify(cfg):
    import numpy as np

    from . import cutoff as cutoff_mod
    from . import solver as solver_mod
    from .continuation import max_mach_ratio

    problem = cfg.build_problem()
    theta = cfg.theta
    cut = problem.cutoff_for(theta)
    rng = np.random.default_rng(2024)
    failures = 0

    def check(name, ok, detail=""):
        nonlocal failures
        print(f"{'PASS' if ok else 'FAIL'}  {name}{'  ' + detail if detail else ''}")
        failures += 0 if ok else 1

    lam_min, lam_max = cut.ellipticity_bounds
    check("ellipticity scan", lam_min > 0.0, f"lambda_min={_fmt(lam_min)}")

    q = cfg.q_infinity
    state = problem.initial_state(q, theta)
    phi = state.phi.copy()
    free = np.flatnonzero(~problem.mesh.outer_vertex_mask)
    phi[free] += 0.05 * (1.0 + q) * rng.standard_normal(len(free))
    state = state.with_phi(phi)
    res = solver_mod.assemble(state, cut, problem.force)
    ok = True
    worst = 0.0
    for _ in range(5):
        direction = rng.standard_normal(len(free))
        direction /= np.linalg.norm(direction)
        h = 1e-6
        phi_p = phi.copy()
        phi_p[free] += h * direction
        phi_m = phi.copy()
        phi_m[free] -= h * direction
        e_p = solver_mod.assemble(state.with_phi(phi_p), cut, problem.force, order="value").energy
        e_m = solver_mod.assemble(state.with_phi(phi_m), cut, problem.force, order="value").energy
        fd = (e_p - e_m) / (2.0 * h)
        an = float(res.gradient @ direction)
        rel = abs(fd - an) / max(abs(an), 1e-14)
        worst = max(worst, rel)
        ok = ok and rel < 1e-5
    check("gradient vs finite differences", ok, f"max rel err={worst:.3g}")
    sym = (res.hessian - res.hessian.T).tocoo()
    check("Hessian symmetry", sym.nnz == 0 or float(np.abs(sym.data).max()) == 0.0)

    state1, rep1 = problem.solve(q, theta)
    phi2 = problem.initial_state(q, theta).phi.copy()
    phi2[free] += 0.1 * (1.0 + q) * rng.standard_normal(len(free))
    state2, rep2 = problem.solve(q, theta, initial=state1.with_phi(phi2))
    du = state1.velocity() - state2.velocity()
    diff = float(np.sqrt(problem.mesh.volumes @ np.einsum("cd,cd->c", du, du)))
    check("two-start uniqueness", diff < 1e-8, f"|du|_L2={diff:.3g}")

    flux = solver_mod.mass_flux_check(state1, cut, problem.force)
    scale = max(1e-12, q * 2.0 * problem.mesh.obstacle_radius)
    check(
        "obstacle mass flux",
        abs(flux["OBSTACLE"]) < 1e-2 * scale + 1e-12,
        f"flux={flux['OBSTACLE']:.3g}",
    )
    ratio, _ = max_mach_ratio(state1, problem.law, problem.force)
    check("solved state inside admissible band", np.isfinite(ratio), f"ratio={_fmt(ratio)}")
    print(f"{'OK' if failures == 0 else 'FAILED'}: {failures} failing checks")
    return 0 if failures == 0 else 1


_COMMANDS = {
    "check-gas": _cmd_check_gas,
    "solve": _cmd_solve,
    "sweep": _cmd_sweep,
    "critical": _cmd_critical,
    "limit": _cmd_limit,
    "verify": _cmd_verify,
    "export": _cmd_export,
}


def main(argv=None):
    _apply_thread_env()
    parser = argparse.ArgumentParser(
        prog="subflow",
        description="steady compressible potential flow in truncated exterior domains",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="path to the YAML run configuration")
    args = parser.parse_args(argv)

    from .config import load_config
    from .errors import ConfigError, SubflowError

    try:
        cfg = load_config(args.config)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except SubflowError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
