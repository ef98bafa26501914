"""Conservative body-force potentials.

Each potential kind evaluates psi and grad(psi) at arbitrary points of the
flow domain:

  * ``ConstantPotential``          -- constant psi, zero force.
  * ``PointSourcePotential``       -- sum of strength/|x - center| kernels.
    The same 1/r kernel is used for planar demos (restricted to the plane)
    so psi stays bounded; a logarithmic planar kernel would not be.
  * ``NewtonianBodyPotential``     -- volume potential of a piecewise-constant
    body density over a tetrahedral obstacle mesh, integrated cell by cell
    with a tensor Gauss rule (Duffy-collapsed, order 4 per axis) and
    distance-adaptive subdivision near the body surface.
  * ``RadialPotential``            -- cubic-spline profile psi(|x|) from samples.

Evaluation is pure; the Newtonian kind caches its quadrature nodes
immutably at construction, so concurrent read-only use is safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import interpolate

from .errors import DomainError, FitError, GeometryError, ParseError, SingularityError, ValidationError
from .mesh import SimplexMesh

__all__ = [
    "ConstantPotential",
    "PointSourcePotential",
    "NewtonianBodyPotential",
    "RadialPotential",
    "DecayReport",
    "potential",
    "potential_gradient",
    "psi_range",
    "decay_report",
    "load_radial_profile",
    "validate_singularities",
]

_NEAR_FACTOR = 2.0
_MAX_REFINE_DEPTH = 3


def _as_points(x, dim):
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != dim:
        raise DomainError(f"points must have dimension {dim}")
    return pts, single


@dataclass(frozen=True, eq=False)
class ConstantPotential:
    value: float
    dimension: int = 2

    def _psi(self, pts):
        return np.full(len(pts), float(self.value))

    def _grad(self, pts):
        return np.zeros_like(pts)


@dataclass(frozen=True, eq=False)
class PointSourcePotential:
    """psi(x) = sum_i strength_i / |x - center_i| (centers inside the obstacle)."""

    sources: tuple
    dimension: int = 3

    def __post_init__(self):
        cleaned = tuple(
            (tuple(float(c) for c in center), float(strength))
            for center, strength in self.sources
        )
        if not cleaned:
            raise DomainError("need at least one point source")
        for center, _ in cleaned:
            if len(center) != self.dimension:
                raise DomainError("source center dimension mismatch")
        object.__setattr__(self, "sources", cleaned)

    def _psi(self, pts):
        out = np.zeros(len(pts))
        for center, strength in self.sources:
            r = np.linalg.norm(pts - np.asarray(center), axis=1)
            if np.any(r == 0.0):
                raise SingularityError("evaluation point coincides with a point source")
            out += strength / r
        return out

    def _grad(self, pts):
        out = np.zeros_like(pts)
        for center, strength in self.sources:
            d = pts - np.asarray(center)
            r = np.linalg.norm(d, axis=1)
            if np.any(r == 0.0):
                raise SingularityError("evaluation point coincides with a point source")
            out -= strength * d / r[:, None] ** 3
        return out


def _duffy_rule(order):
    """Tensor Gauss rule on the reference tetrahedron via the collapsed cube."""
    x1, w1 = np.polynomial.legendre.leggauss(order)
    x1 = 0.5 * (x1 + 1.0)
    w1 = 0.5 * w1
    u, v, w = np.meshgrid(x1, x1, x1, indexing="ij")
    u, v, w = u.ravel(), v.ravel(), w.ravel()
    wu, wv, ww = np.meshgrid(w1, w1, w1, indexing="ij")
    weights = (wu * wv * ww).ravel() * (1.0 - u) ** 2 * (1.0 - v)
    lam1 = u
    lam2 = v * (1.0 - u)
    lam3 = w * (1.0 - u) * (1.0 - v)
    bary = np.stack([lam1, lam2, lam3], axis=1)
    return bary, weights


def _tet_quadrature(verts, bary, weights):
    """Map a reference rule to one tetrahedron; returns (points, weights)."""
    v0 = verts[0]
    edges = verts[1:] - v0
    vol6 = abs(np.linalg.det(edges))
    pts = v0 + bary @ edges
    return pts, weights * vol6


def _split_tet(verts):
    """Uniform 8-split of a tetrahedron (corner tets + inner octahedron)."""
    a, b, c, d = verts
    ab, ac, ad = 0.5 * (a + b), 0.5 * (a + c), 0.5 * (a + d)
    bc, bd, cd = 0.5 * (b + c), 0.5 * (b + d), 0.5 * (c + d)
    return [
        np.stack([a, ab, ac, ad]),
        np.stack([b, ab, bc, bd]),
        np.stack([c, ac, bc, cd]),
        np.stack([d, ad, bd, cd]),
        np.stack([ab, cd, ac, ad]),
        np.stack([ab, cd, ad, bd]),
        np.stack([ab, cd, bd, bc]),
        np.stack([ab, cd, bc, ac]),
    ]


@dataclass(eq=False)
class NewtonianBodyPotential:
    """Volume potential G * integral rho_body(y) / |x - y| dy over the body.

    3D only; planar gravity demos use PointSourcePotential instead.  The
    per-cell density is piecewise constant (a scalar broadcasts).  Cells
    closer to the evaluation point than twice their diameter are subdivided
    recursively before quadrature.
    """

    body: SimplexMesh
    density: np.ndarray
    gravitational_constant: float = 1.0
    quadrature_order: int = 4
    dimension: int = 3

    def __post_init__(self):
        if self.body.dimension != 3 or self.dimension != 3:
            raise GeometryError("Newtonian body potentials are 3D only")
        dens = np.asarray(self.density, dtype=float)
        if dens.ndim == 0:
            dens = np.full(len(self.body.cells), float(dens))
        if len(dens) != len(self.body.cells):
            raise DomainError("need one density value per body cell")
        self.density = dens

    @cached_property
    def _base_rule(self):
        bary, weights = _duffy_rule(self.quadrature_order)
        nodes = []
        wts = []
        cell_of = []
        for i, cell in enumerate(self.body.cells):
            pts, w = _tet_quadrature(self.body.vertices[cell], bary, weights)
            nodes.append(pts)
            wts.append(w * self.density[i])
            cell_of.append(np.full(len(w), i))
        return (
            np.concatenate(nodes),
            np.concatenate(wts),
            np.concatenate(cell_of),
            bary,
            weights,
        )

    def _cell_integral(self, verts, x, bary, weights, depth):
        diam = max(
            np.linalg.norm(verts[i] - verts[j])
            for i in range(4)
            for j in range(i + 1, 4)
        )
        center = verts.mean(axis=0)
        if depth <= 0 or np.linalg.norm(x - center) >= _NEAR_FACTOR * diam:
            pts, w = _tet_quadrature(verts, bary, weights)
            d = x - pts
            r = np.linalg.norm(d, axis=1)
            if np.any(r == 0.0):
                raise SingularityError("evaluation point inside a body quadrature node")
            pot = float(np.sum(w / r))
            grad = -np.einsum("q,qd->d", w / r**3, d)
            return pot, grad
        pot, grad = 0.0, np.zeros(3)
        for child in _split_tet(verts):
            p, g = self._cell_integral(child, x, bary, weights, depth - 1)
            pot += p
            grad += g
        return pot, grad

    def _eval(self, pts, want_grad):
        nodes, wts, cell_of, bary, weights = self._base_rule
        pot = np.zeros(len(pts))
        grad = np.zeros((len(pts), 3))
        chunk = max(1, int(2**22 // max(len(nodes), 1)))
        for s in range(0, len(pts), chunk):
            block = pts[s : s + chunk]
            d = block[:, None, :] - nodes[None, :, :]
            r = np.linalg.norm(d, axis=2)
            if np.any(r == 0.0):
                raise SingularityError("evaluation point inside a body quadrature node")
            pot[s : s + chunk] = (wts / r).sum(axis=1)
            if want_grad:
                grad[s : s + chunk] = -np.einsum("pq,pqd->pd", wts / r**3, d)
        # correct cells too close for the base rule
        centers = self.body.barycenters
        diam = self.body.diameters
        for i, x in enumerate(pts):
            close = np.flatnonzero(
                np.linalg.norm(centers - x, axis=1) < _NEAR_FACTOR * diam
            )
            for ci in close:
                verts = self.body.vertices[self.body.cells[ci]]
                cpts, cw = _tet_quadrature(verts, bary, weights)
                d = x - cpts
                r = np.linalg.norm(d, axis=1)
                base_pot = float(np.sum(cw / r)) * self.density[ci]
                base_grad = -np.einsum("q,qd->d", cw / r**3, d) * self.density[ci]
                fine_pot, fine_grad = self._cell_integral(
                    verts, x, bary, weights, _MAX_REFINE_DEPTH
                )
                pot[i] += self.density[ci] * fine_pot - base_pot
                if want_grad:
                    grad[i] += self.density[ci] * fine_grad - base_grad
        g = self.gravitational_constant
        return g * pot, g * grad

    def _psi(self, pts):
        return self._eval(pts, want_grad=False)[0]

    def _grad(self, pts):
        return self._eval(pts, want_grad=True)[1]


@dataclass(frozen=True, eq=False)
class RadialPotential:
    """psi(|x|) interpolated from (r, psi) samples with a cubic spline."""

    samples: np.ndarray
    dimension: int = 2

    def __post_init__(self):
        data = np.asarray(self.samples, dtype=float)
        if data.ndim != 2 or data.shape[1] != 2 or data.shape[0] < 2:
            raise DomainError("radial profile needs at least 2 (r, psi) pairs")
        if not np.all(np.diff(data[:, 0]) > 0.0):
            raise DomainError("radial profile radii must be strictly increasing")
        object.__setattr__(self, "samples", data)

    @cached_property
    def _spline(self):
        return interpolate.CubicSpline(self.samples[:, 0], self.samples[:, 1])

    @cached_property
    def _dspline(self):
        return self._spline.derivative(1)

    def _check_radii(self, r):
        lo, hi = self.samples[0, 0], self.samples[-1, 0]
        slack = 1e-9 * (1.0 + hi)
        if np.any(r < lo - slack) or np.any(r > hi + slack):
            raise DomainError("radius outside the tabulated profile range")

    def _psi(self, pts):
        r = np.linalg.norm(pts, axis=1)
        self._check_radii(r)
        return self._spline(np.clip(r, self.samples[0, 0], self.samples[-1, 0]))

    def _grad(self, pts):
        r = np.linalg.norm(pts, axis=1)
        self._check_radii(r)
        rc = np.clip(r, self.samples[0, 0], self.samples[-1, 0])
        if np.any(r == 0.0):
            raise SingularityError("radial profile gradient undefined at the origin")
        return (self._dspline(rc) / r)[:, None] * pts


def load_radial_profile(path, dimension=2):
    """Load a radial profile from two-column ASCII "r psi" (# comments)."""
    try:
        data = np.loadtxt(path, comments="#", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ParseError(f"cannot read radial profile {path!r}: {exc}") from exc
    if data.shape[1] != 2:
        raise ParseError(f"radial profile {path!r} must have exactly two columns")
    return RadialPotential(samples=data, dimension=dimension)


# ----------------------------------------------------------------- evaluation


def potential(force, x):
    """psi at one point or an (n, dim) block of points."""
    pts, single = _as_points(x, force.dimension)
    out = force._psi(pts)
    return float(out[0]) if single else out


def potential_gradient(force, x):
    """grad(psi) at one point or an (n, dim) block of points."""
    pts, single = _as_points(x, force.dimension)
    out = force._grad(pts)
    return out[0] if single else out


def psi_range(force, mesh):
    """Min/max of psi over the mesh's quadrature points.

    Covers cell barycenters and boundary-face centroids, since the surface
    term of the reporting functional samples psi on obstacle faces.
    """
    pts = np.concatenate([mesh.barycenters, mesh.boundary_centroids], axis=0)
    vals = force._psi(pts)
    return float(np.min(vals)), float(np.max(vals))


def validate_singularities(force, mesh):
    """Check that singular points lie strictly outside the flow domain."""
    centers = []
    if isinstance(force, PointSourcePotential):
        centers = [np.asarray(c) for c, _ in force.sources]
    elif isinstance(force, NewtonianBodyPotential):
        centers = list(force.body.barycenters)
    if not centers:
        return
    x = mesh.vertices[mesh.cells]  # (nc, dim+1, dim)
    edges = np.swapaxes(x[:, 1:, :] - x[:, :1, :], 1, 2)
    inv = np.linalg.inv(edges)
    for c in centers:
        lam = np.einsum("cde,ce->cd", inv, c[None, :] - x[:, 0, :])
        inside = (
            np.all(lam > -1e-12, axis=1) & (lam.sum(axis=1) < 1.0 + 1e-12)
        )
        if np.any(inside):
            raise ValidationError(
                "a force singularity lies inside the flow domain; it must sit in the obstacle"
            )


# ----------------------------------------------------------------- diagnostics


@dataclass(frozen=True)
class DecayReport:
    """Truncated-domain force-decay diagnostics.

    ``fitted_exponent`` is the signed least-squares log-log slope of the
    annulus maxima of |grad psi| against radius (about -2 for a point
    source; nan when there is nothing to fit).  ``predicted_beta_prime`` is
    the far-field velocity decay rate min(n/2, beta + n/q - 1) implied by
    the stated integrability exponents.
    """

    q_exp: float
    beta: float
    d1_norm: float
    weighted_grad_norm: float
    fitted_exponent: float
    annulus_radii: tuple
    annulus_maxima: tuple
    predicted_beta_prime: float

    @property
    def exponent_defined(self):
        return np.isfinite(self.fitted_exponent)


def decay_report(force, mesh, q_exp, beta, n_annuli=8):
    """Truncated integrability norms and the radial decay fit of |grad psi|."""
    n = mesh.dimension
    if not q_exp > n:
        raise DomainError("q_exp must exceed the dimension")
    if not beta > 1.0 - n / q_exp:
        raise DomainError("beta must exceed 1 - dimension/q_exp")
    bary = mesh.barycenters
    vols = mesh.volumes
    grad = force._grad(bary)
    d1 = np.abs(grad[:, 0])
    expo = 2.0 * n / (n + 2.0)
    d1_norm = float(np.sum(vols * d1**expo) ** (1.0 / expo))
    r = np.linalg.norm(bary, axis=1)
    gmag = np.linalg.norm(grad, axis=1)
    weighted = float(np.sum(vols * (r**beta * gmag) ** q_exp) ** (1.0 / q_exp))
    predicted = min(n / 2.0, beta + n / q_exp - 1.0)

    lo, hi = float(np.min(r)) * 1.001, float(np.max(r)) * 0.999
    edges = np.geomspace(lo, hi, max(n_annuli, 6) + 1)
    radii = []
    maxima = []
    for a, b in zip(edges[:-1], edges[1:]):
        sel = np.flatnonzero((r >= a) & (r < b))
        if not len(sel):
            continue
        k = sel[np.argmax(gmag[sel])]
        # abscissa is the radius of the maximizing cell, not the bin center,
        # which removes the binning bias on lumpy radial distributions
        radii.append(float(r[k]))
        maxima.append(float(gmag[k]))
    radii = np.asarray(radii)
    maxima = np.asarray(maxima)
    usable = maxima > 1e-14
    if usable.sum() >= 2:
        fitted = float(
            np.polyfit(np.log(radii[usable]), np.log(maxima[usable]), 1)[0]
        )
    else:
        fitted = float("nan")
    return DecayReport(
        q_exp=float(q_exp),
        beta=float(beta),
        d1_norm=d1_norm,
        weighted_grad_norm=weighted,
        fitted_exponent=fitted,
        annulus_radii=tuple(radii.tolist()),
        annulus_maxima=tuple(maxima.tolist()),
        predicted_beta_prime=float(predicted),
    )
