"""Discrete energy minimization for the truncated exterior problem.

The flow potential is a P1 field on the exterior mesh with Dirichlet data
``phi = q_infinity * x_1`` on the OUTER boundary; the obstacle slip
condition is natural and never assembled.  With one-point (barycenter)
quadrature the discrete objective is

    J(phi) = sum_cells |K| * G(|grad phi_K|^2, psi(x_K)),

whose gradient reproduces the weak form  integral rho~ grad(phi).grad(eta)
and whose Hessian carries the kernel  a = rho~ I + 2 rho~_v grad(phi) (x)
grad(phi).  Since grad(phi) is cell-constant, the quadrature is exact in
the speed variable, so the cut-off branch bookkeeping is per cell.

The minimization runs damped Newton (Armijo backtracking, factor 1/2) with
diagonally preconditioned conjugate-gradient inner solves; CG raising on
nonpositive curvature doubles as a convexity certificate for the scanned
cut-off.  Assembly accumulates cell contributions in a fixed deterministic
order, so repeated runs are bit-reproducible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from . import cutoff as cutoff_mod
from . import forces as forces_mod
from . import gas
from .errors import CurvatureError, NonConvergenceError
from .mesh import OBSTACLE, OUTER

__all__ = [
    "FlowState",
    "SolveReport",
    "AssembleResult",
    "Problem",
    "uniform_state",
    "assemble",
    "newton_solve",
    "paper_functional",
    "el_residual",
    "mass_flux_check",
]


def dirichlet_values(mesh, q_infinity):
    return q_infinity * mesh.vertices[:, 0]


@dataclass(eq=False)
class FlowState:
    """Nodal potential plus the free-stream speed it was solved at.

    Construction pins the OUTER vertices to the exact Dirichlet data, so the
    far-field invariant holds by fiat.
    """

    mesh: object
    q_infinity: float
    phi: np.ndarray
    theta: float

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float)
        outer = self.mesh.outer_vertex_mask
        phi[outer] = dirichlet_values(self.mesh, self.q_infinity)[outer]
        self.phi = phi

    def velocity(self):
        """Cell-constant gradient of the P1 interpolant, (nc, dim)."""
        return np.einsum(
            "cad,ca->cd", self.mesh.grad_ops, self.phi[self.mesh.cells]
        )

    def speed_sq(self):
        u = self.velocity()
        return np.einsum("cd,cd->c", u, u)

    def with_phi(self, phi):
        return FlowState(self.mesh, self.q_infinity, phi, self.theta)


def uniform_state(mesh, q_infinity, theta):
    """Free-stream initial iterate phi = q_infinity * x_1."""
    return FlowState(mesh, q_infinity, dirichlet_values(mesh, q_infinity), theta)


@dataclass(frozen=True)
class Forcing:
    """Force-potential samples at the mesh quadrature points."""

    psi_cells: np.ndarray
    grad_psi_cells: np.ndarray
    psi_faces: np.ndarray

    @classmethod
    def sample(cls, mesh, force):
        return cls(
            psi_cells=np.asarray(forces_mod.potential(force, mesh.barycenters)),
            grad_psi_cells=np.asarray(
                forces_mod.potential_gradient(force, mesh.barycenters)
            ),
            psi_faces=np.asarray(
                forces_mod.potential(force, mesh.boundary_centroids)
            ),
        )


@dataclass(frozen=True)
class AssembleResult:
    energy: float | None
    gradient: np.ndarray | None  # over free (non-OUTER) vertices
    hessian: sparse.csr_matrix | None
    free_index: np.ndarray
    cutoff_active_cells: int


@dataclass
class SolveReport:
    iterations: int
    converged: bool
    grad_norm: float
    energy: float
    functional_value: float
    max_speed: float
    max_mach_ratio: float
    cutoff_active_cells: int
    cg_iterations: int
    wall_time: float
    history: list = field(default_factory=list)


def _free_index(mesh):
    return np.flatnonzero(~mesh.outer_vertex_mask)


def _assemble_arrays(mesh, phi, cut, forcing, want_energy, want_gradient, want_hessian):
    vols = mesh.volumes
    grads = mesh.grad_ops
    cells = mesh.cells
    nv = len(mesh.vertices)
    u = np.einsum("cad,ca->cd", grads, phi[cells])
    v = np.einsum("cd,cd->c", u, u)
    w = forcing.psi_cells
    value, d_v, _ = cut.evaluate(v, w)
    active = int(np.count_nonzero(v > cut.physical_speed_sq_limit(w) * (1.0 + 1e-12)))

    energy = None
    if want_energy:
        g_val, _, _ = cutoff_mod.EnergyDensity(cut).evaluate(v, w)
        energy = float(np.dot(vols, g_val))

    gradient = None
    free = _free_index(mesh)
    if want_gradient:
        flux = (vols * value)[:, None] * u
        contrib = np.einsum("cad,cd->ca", grads, flux)
        full = np.bincount(cells.ravel(), weights=contrib.ravel(), minlength=nv)
        gradient = full[free]

    hessian = None
    if want_hessian:
        dim = mesh.dimension
        eye = np.eye(dim)
        a = value[:, None, None] * eye + 2.0 * d_v[:, None, None] * (
            u[:, :, None] * u[:, None, :]
        )
        ag = np.einsum("cde,cbe->cbd", a, grads)
        local = vols[:, None, None] * np.einsum("cad,cbd->cab", grads, ag)
        local = 0.5 * (local + np.swapaxes(local, 1, 2))  # exact symmetry
        vert_to_free = np.full(nv, -1, dtype=np.int64)
        vert_to_free[free] = np.arange(len(free))
        rows = vert_to_free[np.repeat(cells, dim + 1, axis=1).ravel()]
        cols = vert_to_free[np.tile(cells, (1, dim + 1)).ravel()]
        vals = local.ravel()
        keep = (rows >= 0) & (cols >= 0)
        hessian = sparse.coo_matrix(
            (vals[keep], (rows[keep], cols[keep])),
            shape=(len(free), len(free)),
        ).tocsr()
    return AssembleResult(
        energy=energy,
        gradient=gradient,
        hessian=hessian,
        free_index=free,
        cutoff_active_cells=active,
    )


def assemble(state, cut, force, order="value+gradient+hessian"):
    """Assemble the requested pieces of the discrete energy at a state.

    ``order`` is one of "value", "value+gradient",
    "value+gradient+hessian".  The gradient is restricted to free
    (non-OUTER) vertices; the Hessian is sparse symmetric over the same set.
    """
    orders = ("value", "value+gradient", "value+gradient+hessian")
    if order not in orders:
        raise ValueError(f"order must be one of {orders}")
    forcing = Forcing.sample(state.mesh, force)
    return _assemble_arrays(
        state.mesh,
        state.phi,
        cut,
        forcing,
        want_energy=True,
        want_gradient=order != "value",
        want_hessian=order == orders[2],
    )


def _pcg(hess, rhs, rtol, max_iter):
    """Jacobi-preconditioned CG; raises CurvatureError on p'Ap <= 0."""
    diag = np.asarray(hess.diagonal())
    if np.any(diag <= 0.0):
        raise CurvatureError("Hessian diagonal is not positive")
    minv = 1.0 / diag
    x = np.zeros_like(rhs)
    r = rhs.copy()
    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0.0:
        return x, 0
    z = minv * r
    p = z.copy()
    rz = float(r @ z)
    for k in range(1, max_iter + 1):
        ap = hess @ p
        pap = float(p @ ap)
        if pap <= 0.0:
            raise CurvatureError("conjugate gradients met nonpositive curvature")
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        if np.linalg.norm(r) <= rtol * rhs_norm:
            return x, k
        z = minv * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, max_iter


def newton_solve(
    initial,
    cut,
    force,
    tol=1e-10,
    max_iter=60,
    cg_rtol=1e-8,
    cg_max_factor=10.0,
    armijo_c1=1e-4,
    max_backtracks=60,
):
    """Damped Newton on the convex discrete energy.

    Success means the free-vertex gradient norm drops below
    ``tol * (1 + |energy|)``.  Raises NonConvergenceError (carrying the last
    report) past ``max_iter`` and propagates CurvatureError from CG, which
    cannot fire if the cut-off's ellipticity scan passed.
    """
    t0 = time.perf_counter()
    mesh = initial.mesh
    forcing = Forcing.sample(mesh, force)
    phi = initial.phi.copy()
    free = _free_index(mesh)
    history = []
    cg_total = 0
    step = 0.0
    energy = np.nan
    gnorm = np.nan
    converged = False
    it = 0

    def pieces(current_phi, hess):
        return _assemble_arrays(
            mesh, current_phi, cut, forcing, True, True, hess
        )

    for it in range(max_iter + 1):
        res = pieces(phi, hess=True)
        energy = res.energy
        grad = res.gradient
        gnorm = float(np.linalg.norm(grad))
        history.append((it, energy, gnorm, step))
        tol_eff = tol * (1.0 + abs(energy))
        if gnorm <= tol_eff:
            converged = True
            break
        # inexact-Newton forcing: near the target the inner solve must be
        # tighter than the default or the outer iteration floors out
        rtol_k = min(cg_rtol, max(0.01 * tol_eff / gnorm, 1e-15))
        delta, cg_iters = _pcg(
            res.hessian, -grad, rtol_k, int(cg_max_factor * len(free))
        )
        cg_total += cg_iters
        slope = float(grad @ delta)
        step = 1.0
        for _ in range(max_backtracks):
            trial = phi.copy()
            trial[free] += step * delta
            e_trial = _assemble_arrays(
                mesh, trial, cut, forcing, True, False, False
            ).energy
            if e_trial <= energy + armijo_c1 * step * slope:
                break
            step *= 0.5
        else:
            break  # line search stalled; report as non-convergence below
        phi = trial

    state = FlowState(mesh, initial.q_infinity, phi, cut.theta)
    final = _assemble_arrays(mesh, phi, cut, forcing, True, True, False)
    speed_sq = state.speed_sq()
    q2 = np.asarray(gas.critical_speed_sq(cut.law, forcing.psi_cells, check=False))
    ratio = np.sqrt(speed_sq / q2)
    report = SolveReport(
        iterations=it,
        converged=converged,
        grad_norm=float(np.linalg.norm(final.gradient)),
        energy=float(final.energy),
        functional_value=paper_functional(state, cut, force, forcing=forcing),
        max_speed=float(np.sqrt(np.max(speed_sq))),
        max_mach_ratio=float(np.max(ratio)),
        cutoff_active_cells=final.cutoff_active_cells,
        cg_iterations=cg_total,
        wall_time=time.perf_counter() - t0,
        history=history,
    )
    if not converged:
        raise NonConvergenceError(
            f"Newton did not reach tol {tol:g} within {max_iter} iterations "
            f"(gradient norm {report.grad_norm:g})",
            report=report,
            state=state,
        )
    return state, report


def paper_functional(state, cut, force, forcing=None):
    """Reporting functional over the truncated domain.

    Combines the convexified bulk difference, the body term carrying
    d(psi)/dx_1, and the obstacle surface term weighted by the first normal
    component; it vanishes identically on the free-stream state and is
    nonpositive at the minimizer.  Signs are fixed so that the first
    variation reduces to the weak form for obstacle-supported test
    functions (the surface normal here points out of the flow region).
    """
    mesh = state.mesh
    if forcing is None:
        forcing = Forcing.sample(mesh, force)
    q = state.q_infinity
    vols = mesh.volumes
    w = forcing.psi_cells
    dens = cutoff_mod.EnergyDensity(cut)
    u = state.velocity()
    v = np.einsum("cd,cd->c", u, u)
    g_state, _, _ = dens.evaluate(v, w)
    q2 = np.full_like(w, q * q)
    g_free, gv_free, gvw_free = dens.evaluate(q2, w)
    bulk = vols @ (g_state - g_free - 2.0 * gv_free * q * (u[:, 0] - q))

    pert_vertex = state.phi - dirichlet_values(mesh, q)
    pert_cells = pert_vertex[mesh.cells].mean(axis=1)
    body = vols @ (2.0 * gvw_free * q * forcing.grad_psi_cells[:, 0] * pert_cells)

    sel = np.flatnonzero(state.mesh.boundary_tags == OBSTACLE)
    faces = mesh.boundary_faces[sel]
    areas = mesh.boundary_areas[sel]
    normals = mesh.boundary_normals[sel]
    psi_f = forcing.psi_faces[sel]
    q2f = np.full_like(psi_f, q * q)
    _, gv_face, _ = dens.evaluate(q2f, psi_f)
    pert_face = pert_vertex[faces].mean(axis=1)
    surface = np.sum(areas * 2.0 * gv_face * q * pert_face * normals[:, 0])
    return float(bulk - body + surface)


def el_residual(state, cut, force):
    """Weak residual norm and a per-cell flux-jump indicator field.

    The weak residual is exactly the assembled free-vertex gradient norm;
    the strong indicator aggregates interface jumps of the mass flux
    rho~ * grad(phi), scaled by face size.
    """
    res = assemble(state, cut, force, order="value+gradient")
    weak = float(np.linalg.norm(res.gradient))
    mesh = state.mesh
    forcing = Forcing.sample(mesh, force)
    u = state.velocity()
    v = np.einsum("cd,cd->c", u, u)
    value, _, _ = cut.evaluate(v, forcing.psi_cells)
    flux = value[:, None] * u
    _, icells, areas, normals = mesh.interior_faces
    jump = np.einsum(
        "fd,fd->f", flux[icells[:, 0]] - flux[icells[:, 1]], normals
    )
    h_face = areas ** (1.0 / (mesh.dimension - 1))
    eta_face = h_face * areas * jump**2
    eta_cells = np.zeros(len(mesh.cells))
    np.add.at(eta_cells, icells[:, 0], 0.5 * eta_face)
    np.add.at(eta_cells, icells[:, 1], 0.5 * eta_face)
    return weak, np.sqrt(eta_cells)


def mass_flux_check(state, cut, force):
    """Boundary flux of rho~ * grad(phi) per tag (outward from the flow)."""
    mesh = state.mesh
    forcing = Forcing.sample(mesh, force)
    u = state.velocity()
    v = np.einsum("cd,cd->c", u, u)
    value, _, _ = cut.evaluate(v, forcing.psi_cells)
    flux = value[:, None] * u
    owners = mesh.boundary_owner_cells
    fn = np.einsum("fd,fd->f", flux[owners], mesh.boundary_normals)
    out = {}
    for tag in (OBSTACLE, OUTER):
        sel = mesh.boundary_tags == tag
        out[tag] = float(np.sum(fn[sel] * mesh.boundary_areas[sel]))
    return out


# ---------------------------------------------------------------- convenience


@dataclass(eq=False)
class Problem:
    """Bundle of gas law, force, mesh and solver options for pipelines."""

    law: gas.GasLaw
    force: object
    mesh: object
    pad_rel: float = 0.01
    tol: float = 1e-10
    max_iter: int = 60
    cg_rtol: float = 1e-8
    deterministic: bool = True

    def __post_init__(self):
        self._cutoffs = {}
        forces_mod.validate_singularities(self.force, self.mesh)
        self.force_range = forces_mod.psi_range(self.force, self.mesh)
        gas.check_admissible(self.law, *self.force_range)

    def cutoff_for(self, theta):
        key = float(theta)
        if key not in self._cutoffs:
            self._cutoffs[key] = cutoff_mod.build_cutoff(
                self.law, self.force_range, key, pad_rel=self.pad_rel
            )
        return self._cutoffs[key]

    def initial_state(self, q_infinity, theta):
        return uniform_state(self.mesh, q_infinity, theta)

    def solve(self, q_infinity, theta, initial=None, tol=None, max_iter=None):
        cut = self.cutoff_for(theta)
        if initial is None:
            initial = self.initial_state(q_infinity, theta)
        return newton_solve(
            initial,
            cut,
            self.force,
            tol=self.tol if tol is None else tol,
            max_iter=self.max_iter if max_iter is None else max_iter,
            cg_rtol=self.cg_rtol,
        )
