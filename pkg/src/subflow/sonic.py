"""Approach-to-critical diagnostics.

Solving at free-stream speeds q_k = q_hat * (1 - 2**-k) produces a sequence
of flow fields climbing toward the critical regime.  On a fixed mesh the
continuum limit statement is out of reach; what *is* computable, and what
this module reports, are

  * pairwise L2 velocity differences on a compact annulus (Cauchy trends),
  * distributional residuals of the mass and momentum balances against a
    set of compactly supported P1 test fields,
  * the far-field decay rate of |grad phi - q e_1| fitted on log-spaced
    annuli.

The densities entering the residuals come from the raw Bernoulli closure,
not the cut-off, so the numbers mean what the balance laws mean.

Mind the gap: at fixed mesh and truncation radius these diagnostics exhibit
uniformly bounded weak residuals and Cauchy behaviour of the approximating
sequence; they do not certify convergence to a weak solution on the
unbounded domain.  (`GAP_STATEMENT` below travels verbatim into reports.)
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import forces as forces_mod
from . import gas
from .continuation import make_record, _rescaled_initial
from .errors import FitError, NonConvergenceError

__all__ = [
    "LimitSequence",
    "build_sequence",
    "cauchy_table",
    "make_test_fields",
    "weak_residual_mass",
    "weak_residual_momentum",
    "farfield_decay_fit",
    "write_limit_csv",
    "GAP_STATEMENT",
]

GAP_STATEMENT = (
    "At fixed mesh and truncation radius these diagnostics exhibit uniformly "
    "bounded weak residuals and Cauchy behaviour of the approximating "
    "sequence; they do not certify convergence to a weak solution on the "
    "unbounded domain."
)


@dataclass(eq=False)
class LimitSequence:
    """Converged states at increasing free-stream speeds below the estimate."""

    records: list
    q_values: list
    theta: float
    compact_annulus: tuple  # (inner radius, outer radius) for norms
    capped_members: list


def default_compact_annulus(mesh):
    """Annulus clear of both the obstacle layer and the truncation layer."""
    return (1.5 * mesh.obstacle_radius, 0.5 * mesh.outer_radius)


def build_sequence(q_hat_estimate, n_steps, problem, theta, near_tol=1e-8):
    """Solve at q_hat * (1 - 2**-k), k = 1..n_steps, warm-started.

    Members past 0.85 of the estimate run with the relaxed near-critical
    tolerance and a doubled iteration cap (conditioning degrades there);
    members that still hit the cap are recorded anyway and flagged in
    ``capped_members``.
    """
    if n_steps < 3:
        raise ValueError("need at least 3 members")
    qs = [q_hat_estimate * (1.0 - 2.0 ** (-k)) for k in range(1, n_steps + 1)]
    records = []
    capped = []
    prev = None
    for q in qs:
        initial = _rescaled_initial(problem, prev, q, theta)
        near = q >= 0.85 * q_hat_estimate
        try:
            state, report = problem.solve(
                q,
                theta,
                initial=initial,
                tol=max(problem.tol, near_tol) if near else None,
                max_iter=2 * problem.max_iter if near else None,
            )
        except NonConvergenceError as exc:
            if exc.state is None:
                raise
            state, report = exc.state, exc.report
            capped.append(q)
        rec = make_record(state, report, problem, theta)
        records.append(rec)
        prev = rec.state
    return LimitSequence(
        records=records,
        q_values=qs,
        theta=theta,
        compact_annulus=default_compact_annulus(problem.mesh),
        capped_members=capped,
    )


def _annulus_cells(mesh, annulus):
    r = np.linalg.norm(mesh.barycenters, axis=1)
    return (r >= annulus[0]) & (r <= annulus[1])


def cauchy_table(seq):
    """Pairwise L2 velocity differences on the compact annulus."""
    if len(seq.records) < 2:
        raise ValueError("need at least 2 members")
    mesh = seq.records[0].state.mesh
    sel = _annulus_cells(mesh, seq.compact_annulus)
    vols = mesh.volumes[sel]
    vels = [rec.state.velocity()[sel] for rec in seq.records]
    m = len(vels)
    out = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            diff = vels[i] - vels[j]
            out[i, j] = out[j, i] = float(
                np.sqrt(vols @ np.einsum("cd,cd->c", diff, diff))
            )
    return out


def make_test_fields(mesh, annulus=None, n_bumps=10, seed=0):
    """Compactly supported P1 test fields on the annulus.

    Returns (hat_vertices, bump_coefficients): the indices of vertices whose
    whole star lies inside the annulus (their nodal hats are the cheap test
    set), plus ``n_bumps`` random smooth bumps sampled onto the vertices.
    """
    if annulus is None:
        annulus = default_compact_annulus(mesh)
    r_vert = np.linalg.norm(mesh.vertices, axis=1)
    inside_vert = (r_vert >= annulus[0]) & (r_vert <= annulus[1])
    cell_ok = np.all(inside_vert[mesh.cells], axis=1)
    vert_ok = np.ones(len(mesh.vertices), dtype=bool)
    for i in range(mesh.cells.shape[1]):
        bad = ~cell_ok
        vert_ok[mesh.cells[bad][:, i]] = False
    hats = np.flatnonzero(vert_ok & inside_vert)

    rng = np.random.default_rng(seed)
    mid = 0.5 * (annulus[0] + annulus[1])
    halfwidth = 0.5 * (annulus[1] - annulus[0])
    bumps = []
    for _ in range(n_bumps):
        radius = rng.uniform(0.3, 0.9) * halfwidth
        rc = rng.uniform(annulus[0] + radius, annulus[1] - radius)
        ang = rng.uniform(0.0, 2.0 * np.pi)
        if mesh.dimension == 2:
            center = rc * np.array([np.cos(ang), np.sin(ang)])
        else:
            z = rng.uniform(-1.0, 1.0)
            s = np.sqrt(1.0 - z * z)
            center = rc * np.array([s * np.cos(ang), s * np.sin(ang), z])
        d2 = np.sum((mesh.vertices - center) ** 2, axis=1) / radius**2
        coeff = np.where(d2 < 1.0, (1.0 - d2) ** 3, 0.0)
        coeff[~inside_vert] = 0.0
        if np.any(coeff > 0.0):
            bumps.append(coeff)
    return hats, bumps


def _hat_norms(mesh):
    """sqrt of integral |grad hat_i|^2 for every vertex."""
    grads = mesh.grad_ops
    vols = mesh.volumes
    sq = vols[:, None] * np.einsum("cad,cad->ca", grads, grads)
    out = np.bincount(
        mesh.cells.ravel(), weights=sq.ravel(), minlength=len(mesh.vertices)
    )
    return np.sqrt(out)


def _grad_of_coeff(mesh, coeff):
    return np.einsum("cad,ca->cd", mesh.grad_ops, coeff[mesh.cells])


def bernoulli_fields(state, law, force):
    """(density, pressure, velocity) per cell from the raw closure."""
    psi = np.asarray(forces_mod.potential(force, state.mesh.barycenters))
    u = state.velocity()
    v = np.einsum("cd,cd->c", u, u)
    bern = gas.bernoulli_density(law, v, psi)
    rho = np.asarray(bern.rho)
    p, _, _ = gas.pressure(law, rho)
    return rho, np.asarray(p), u


def weak_residual_mass(state, law, force, test_set=None):
    """max over test fields chi of |integral rho u . grad chi| / |grad chi|_L2.

    For nodal hats this is, entry by entry, the assembled weak form with the
    Bernoulli density in place of the cut-off one.
    """
    mesh = state.mesh
    if test_set is None:
        test_set = make_test_fields(mesh)
    hats, bumps = test_set
    rho, _, u = bernoulli_fields(state, law, force)
    vols = mesh.volumes
    flux = (vols * rho)[:, None] * u
    contrib = np.einsum("cad,cd->ca", mesh.grad_ops, flux)
    weak = np.bincount(
        mesh.cells.ravel(), weights=contrib.ravel(), minlength=len(mesh.vertices)
    )
    norms = _hat_norms(mesh)
    best = 0.0
    if len(hats):
        best = float(np.max(np.abs(weak[hats]) / norms[hats]))
    for coeff in bumps:
        g = _grad_of_coeff(mesh, coeff)
        val = float(np.sum(np.einsum("cd,cd->c", flux, g)))
        nrm = float(np.sqrt(vols @ np.einsum("cd,cd->c", g, g)))
        if nrm > 0.0:
            best = max(best, abs(val) / nrm)
    return best


def weak_residual_momentum(state, law, force, test_set=None):
    """max over vector test fields of the momentum-balance defect.

    Tests |integral (rho u (x) u) : grad chi + p div chi + rho grad(psi) . chi|
    normalized by |grad chi|_L2; the pressure comes from the gas law at the
    Bernoulli density.  Vector tests are nodal hats times coordinate
    directions plus random bumps with random constant directions.
    """
    mesh = state.mesh
    if test_set is None:
        test_set = make_test_fields(mesh)
    hats, bumps = test_set
    rho, p, u = bernoulli_fields(state, law, force)
    grad_psi = np.asarray(forces_mod.potential_gradient(force, mesh.barycenters))
    vols = mesh.volumes
    dim = mesh.dimension
    grads = mesh.grad_ops
    cells = mesh.cells
    nv = len(mesh.vertices)

    # chi = hat_i * e_k:
    #   (rho u(x)u):grad chi = rho u_k (u . grad hat_i)
    #   p div chi            = p d_k hat_i
    #   rho grad(psi).chi    = rho d_k(psi) * mean(hat_i)
    u_dot_grad = np.einsum("cd,cad->ca", u, grads)  # (nc, dim+1)
    norms = _hat_norms(mesh)
    best = 0.0
    for k in range(dim):
        per_cell = (
            (vols * rho * u[:, k])[:, None] * u_dot_grad
            + (vols * p)[:, None] * grads[:, :, k]
            + (vols * rho * grad_psi[:, k] / (dim + 1.0))[:, None]
            * np.ones((len(cells), dim + 1))
        )
        weak = np.bincount(cells.ravel(), weights=per_cell.ravel(), minlength=nv)
        if len(hats):
            best = max(best, float(np.max(np.abs(weak[hats]) / norms[hats])))
    rng = np.random.default_rng(12345)
    for coeff in bumps:
        direction = rng.normal(size=dim)
        direction /= np.linalg.norm(direction)
        g = _grad_of_coeff(mesh, coeff)  # grad of the scalar bump
        chi_bar = coeff[cells].mean(axis=1)
        term = (
            rho * (u @ direction) * np.einsum("cd,cd->c", u, g)
            + p * (g @ direction)
            + rho * (grad_psi @ direction) * chi_bar
        )
        val = float(vols @ term)
        nrm = float(
            np.sqrt(vols @ np.einsum("cd,cd->c", g, g))
        )  # |grad chi| = |grad bump| for a unit constant direction
        if nrm > 0.0:
            best = max(best, abs(val) / nrm)
    return best


@dataclass(frozen=True)
class DecayFit:
    exponent: float
    radii: tuple
    maxima: tuple


def farfield_decay_fit(state, n_annuli=6, inner=None, outer=None):
    """Fit |grad phi - q e_1| ~ r**(-exponent) on log-spaced annuli.

    Defaults to annuli between twice the obstacle radius and 0.8 of the
    truncation radius.  Raises FitError when the deviation is identically
    zero (nothing to fit).
    """
    mesh = state.mesh
    if inner is None:
        inner = 2.0 * mesh.obstacle_radius
    if outer is None:
        outer = 0.8 * mesh.outer_radius
    if n_annuli < 5:
        raise ValueError("need at least 5 annuli")
    u = state.velocity()
    ref = np.zeros(mesh.dimension)
    ref[0] = state.q_infinity
    dev = np.linalg.norm(u - ref, axis=1)
    r = np.linalg.norm(mesh.barycenters, axis=1)
    edges = np.geomspace(inner, outer, n_annuli + 1)
    radii = []
    maxima = []
    for a, b in zip(edges[:-1], edges[1:]):
        sel = np.flatnonzero((r >= a) & (r < b))
        if not len(sel):
            continue
        k = sel[np.argmax(dev[sel])]
        radii.append(float(r[k]))
        maxima.append(float(dev[k]))
    maxima = np.asarray(maxima)
    radii = np.asarray(radii)
    if len(radii) < 2 or np.all(maxima < 1e-12):
        raise FitError("far-field deviation is at rounding level; nothing to fit")
    slope = np.polyfit(np.log(radii), np.log(np.maximum(maxima, 1e-300)), 1)[0]
    return DecayFit(
        exponent=float(-slope), radii=tuple(radii.tolist()), maxima=tuple(maxima.tolist())
    )


def write_limit_csv(seq, law, force, path):
    """Member diagnostics table; the truncation-gap note rides along on top."""
    mesh = seq.records[0].state.mesh
    tests = make_test_fields(mesh, seq.compact_annulus)
    with open(path, "w", newline="") as fh:
        fh.write(f"# {GAP_STATEMENT}\n")
        writer = csv.writer(fh)
        writer.writerow(
            [
                "member",
                "q_infinity",
                "max_mach_ratio",
                "mass_residual",
                "momentum_residual",
                "decay_exponent",
            ]
        )
        for i, rec in enumerate(seq.records):
            mass = weak_residual_mass(rec.state, law, force, tests)
            mom = weak_residual_momentum(rec.state, law, force, tests)
            try:
                decay = farfield_decay_fit(rec.state).exponent
            except FitError:
                decay = float("nan")
            writer.writerow(
                [
                    i,
                    f"{rec.q_infinity:.17g}",
                    f"{rec.max_mach_ratio:.17g}",
                    f"{mass:.17g}",
                    f"{mom:.17g}",
                    f"{decay:.17g}",
                ]
            )
