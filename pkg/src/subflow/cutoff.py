"""Speed cut-off of the Bernoulli density.

The physical density rho(speed_sq, psi) = enthalpy_inverse(psi - speed_sq/2)
degenerates as the flow approaches the critical speed, and with it the
quasilinear potential operator loses ellipticity.  For a margin parameter
theta in (0, 1/2) the cut-off density

  * follows the physical branch while speed <= (1 - 2 theta) * q_cr(psi),
  * holds a constant plateau once   speed >= (1 - theta) * q_cr(psi),
  * joins the two on the middle band with a smooth monotone connection.

The connection is built in the speed variable s through the mass-flux
function m(s) = s * rho~(s^2, psi), whose s-derivative is exactly the
along-flow eigenvalue of the coefficient matrix:

    a(p, w) = rho~ I + 2 rho~_v p (x) p,   eigenvalues rho~ and dm/ds.

Prescribing dm/ds directly as a positive piecewise-linear profile -- the
physical value at the left junction, the plateau value at the right one, a
constant mid level in between solved from the mass increment in closed
form -- makes uniform ellipticity hold *by construction* with
lambda_min >= min of the profile, while both junctions stay exactly C^1.
(A plain value-space cubic Hermite blend loses ellipticity for theta below
about 0.07: its interior slope overshoots the physical one by up to 4/3,
which is more than the O(theta) sonic margin can absorb.)  The ellipticity
scan remains as a constructed-in verification gate and aborts construction
if it ever fails.

The energy density G(Lambda, psi) = 1/2 * integral_0^Lambda rho~(v, psi) dv
is what the finite element solver integrates; its v-derivative is rho~/2 by
construction, and every branch integrates in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from . import gas
from .errors import AdmissibilityError, DomainError, EllipticityError

__all__ = [
    "CutoffDensity",
    "EnergyDensity",
    "build_cutoff",
    "plateau_constant",
    "coefficient_matrix",
    "ellipticity_scan",
]

_PLATEAU_SAMPLES = 1024
_DEFAULT_SCAN_GRID = (192, 48)
_RAMP_FRACTION = 0.15


def _sup_branch_value(law, theta, w):
    """Physical density evaluated at the right-junction speed for head w."""
    q2 = gas.critical_speed_sq(law, w, check=False)
    return np.asarray(
        gas.enthalpy_inverse(
            law, np.asarray(w, dtype=float) - 0.5 * (1.0 - theta) ** 2 * np.asarray(q2)
        ),
        dtype=float,
    )


def plateau_constant(law, force_range, theta):
    """Supremum of the right-junction physical density over the force range.

    Dense sampling (1024 points) locates the maximum, golden-section search
    refines it.  A collapsed range reduces to a single evaluation.
    """
    lo, hi = float(force_range[0]), float(force_range[1])
    if not 0.0 < theta < 0.5:
        raise DomainError("theta must lie in (0, 1/2)")
    if lo > hi:
        raise DomainError("force_range must be ordered")
    gas.check_admissible(law, lo, hi)
    if lo == hi:
        return float(_sup_branch_value(law, theta, lo))
    ws = np.linspace(lo, hi, _PLATEAU_SAMPLES)
    vals = _sup_branch_value(law, theta, ws)
    k = int(np.argmax(vals))
    best = float(vals[k])
    a = ws[max(k - 1, 0)]
    b = ws[min(k + 1, len(ws) - 1)]
    if b > a:
        res = optimize.minimize_scalar(
            lambda w: -float(_sup_branch_value(law, theta, w)),
            bounds=(a, b),
            method="bounded",
            options={"xatol": 1e-12 * (1.0 + abs(hi))},
        )
        best = max(best, -float(res.fun))
    return best


@dataclass(frozen=True, eq=False)
class CutoffDensity:
    """Cut-off density rho~(v, w) with partial derivatives.

    ``force_range`` is the raw (psi_min, psi_max) the plateau supremum was
    taken over; evaluations tolerate a padded interval around it so that
    quadrature-point extremes do not trip the range check.
    """

    law: gas.GasLaw
    force_range: tuple
    theta: float
    plateau: float
    pad: float = 0.0
    ellipticity_bounds: tuple | None = None

    # ------------------------------------------------------------ internals
    def _check_range(self, w):
        lo, hi = self.force_range
        slack = self.pad + 1e-9 * (1.0 + max(abs(lo), abs(hi)))
        if np.any(w < lo - slack) or np.any(w > hi + slack):
            raise DomainError(
                f"psi value outside the padded force range "
                f"[{lo - slack:g}, {hi + slack:g}]"
            )

    def _band(self, w):
        """Connection-band data at each head value w (arrays shaped like w).

        Returns speeds s1 < sa <= sb < s2, the eigenvalue profile values
        (ell1, ell_star, ell2), and the mass-flux values at s1, sa, sb.
        """
        law = self.law
        theta = self.theta
        q2, _ = gas._critical_speed_sq_with_slope(law, w)
        q2 = np.asarray(q2, dtype=float)
        v1 = (1.0 - 2.0 * theta) ** 2 * q2
        rho1 = np.asarray(gas.enthalpy_inverse(law, w - 0.5 * v1), dtype=float)
        _, dp1, _ = law._pressure(rho1)
        s1 = np.sqrt(v1)
        s2 = (1.0 - theta) * np.sqrt(q2)
        ell1 = rho1 * (1.0 - v1 / dp1)  # rho (1 - M^2) on the physical side
        ell2 = self.plateau
        m1 = s1 * rho1
        m2 = s2 * self.plateau
        h = s2 - s1
        avg = (m2 - m1) / h
        mu = np.minimum(_RAMP_FRACTION, avg / (4.0 * ell1))
        nu = np.minimum(_RAMP_FRACTION, avg / (4.0 * ell2))
        ell_star = (avg - 0.5 * mu * ell1 - 0.5 * nu * ell2) / (
            1.0 - 0.5 * mu - 0.5 * nu
        )
        sa = s1 + mu * h
        sb = s2 - nu * h
        ma = m1 + 0.5 * (ell1 + ell_star) * (sa - s1)
        mb = ma + ell_star * (sb - sa)
        return s1, sa, sb, s2, ell1, ell_star, ell2, m1, ma, mb

    def _band_value(self, s, band):
        """Mass flux m and eigenvalue ell at speeds s inside the band."""
        s1, sa, sb, s2, ell1, ell_star, ell2, m1, ma, mb = band
        in_a = s <= sa
        in_c = s >= sb
        # ramp pieces are linear in ell, so m is quadratic in s
        fa = np.where(in_a, (s - s1) / np.maximum(sa - s1, 1e-300), 0.0)
        ell_a = ell1 + (ell_star - ell1) * fa
        m_a = m1 + 0.5 * (ell1 + ell_a) * (s - s1)
        m_b = ma + ell_star * (s - sa)
        fc = np.where(in_c, (s - sb) / np.maximum(s2 - sb, 1e-300), 0.0)
        ell_c = ell_star + (ell2 - ell_star) * fc
        m_c = mb + 0.5 * (ell_star + ell_c) * (s - sb)
        ell = np.where(in_a, ell_a, np.where(in_c, ell_c, ell_star))
        m = np.where(in_a, m_a, np.where(in_c, m_c, m_b))
        return m, ell

    def _value_all(self, v, w):
        """Cut-off density value on every branch (no range checks)."""
        v = np.asarray(v, dtype=float)
        w = np.asarray(w, dtype=float)
        band = self._band(w)
        s1, sa, sb, s2 = band[0], band[1], band[2], band[3]
        s = np.sqrt(np.maximum(v, 0.0))
        physical = s <= s1
        plateau = s >= s2
        arg = np.where(physical, w - 0.5 * v, w - 0.5 * s1**2)
        rho_p = np.asarray(gas.enthalpy_inverse(self.law, arg), dtype=float)
        m, _ = self._band_value(np.clip(s, s1, s2), band)
        val_mid = m / np.maximum(s, 1e-300)
        return np.where(physical, rho_p, np.where(plateau, self.plateau, val_mid))

    # ------------------------------------------------------------ evaluation
    def evaluate(self, speed_sq, psi):
        """Return (value, d/d speed_sq, d/d psi) of the cut-off density."""
        v = np.asarray(speed_sq, dtype=float)
        w = np.asarray(psi, dtype=float)
        self._check_range(w)
        v, w = np.broadcast_arrays(v, w)
        band = self._band(w)
        s1, s2 = band[0], band[3]
        s = np.sqrt(np.maximum(v, 0.0))
        physical = s <= s1
        plateau = s >= s2

        arg = np.where(physical, w - 0.5 * v, w - 0.5 * s1**2)
        rho_p = np.asarray(gas.enthalpy_inverse(self.law, arg), dtype=float)
        _, dp_p, _ = self.law._pressure(rho_p)
        dv_phys = -rho_p / (2.0 * dp_p)
        dw_phys = rho_p / dp_p

        s_mid = np.clip(s, s1, s2)
        m, ell = self._band_value(s_mid, band)
        val_mid = m / np.maximum(s_mid, 1e-300)
        dv_mid = (ell - val_mid) / np.maximum(2.0 * s_mid**2, 1e-300)

        value = np.where(physical, rho_p, np.where(plateau, self.plateau, val_mid))
        d_v = np.where(physical, dv_phys, np.where(plateau, 0.0, dv_mid))

        mid = ~(physical | plateau)
        d_w = np.where(physical, dw_phys, 0.0)
        if np.any(mid):
            vm = v[mid]
            wm = w[mid]
            step = 1e-4 * (1.0 + np.abs(wm))
            diffs = (
                8.0 * (self._value_all(vm, wm + step) - self._value_all(vm, wm - step))
                - (self._value_all(vm, wm + 2 * step) - self._value_all(vm, wm - 2 * step))
            ) / (12.0 * step)
            d_w = np.asarray(d_w, dtype=float).copy()
            d_w[mid] = diffs
        return gas._ret(speed_sq if np.ndim(speed_sq) else psi, value, d_v, d_w)

    def physical_speed_sq_limit(self, psi):
        """Upper bound of the squared speed still on the physical branch."""
        q2 = gas.critical_speed_sq(self.law, psi, check=False)
        return (1.0 - 2.0 * self.theta) ** 2 * np.asarray(q2, dtype=float)


def build_cutoff(law, force_range, theta, pad_rel=0.01, scan_grid=_DEFAULT_SCAN_GRID):
    """Construct and validate a cut-off density.

    Checks admissibility of the force range (including that the sonic
    density stays above the law's floor), computes the plateau constant,
    and runs the ellipticity scan; a nonpositive scanned minimum aborts
    construction with EllipticityError.
    """
    lo, hi = float(force_range[0]), float(force_range[1])
    if not 0.0 < theta < 0.5:
        raise DomainError("theta must lie in (0, 1/2)")
    gas.check_admissible(law, lo, hi)
    if np.asarray(gas.sonic_density(law, lo)) < law.rho_floor:
        raise AdmissibilityError(
            "force range approaches vacuum at the sonic state; raise psi_min or lower rho_floor"
        )
    plateau = plateau_constant(law, (lo, hi), theta)
    cut = CutoffDensity(
        law=law,
        force_range=(lo, hi),
        theta=theta,
        plateau=plateau,
        pad=pad_rel * (hi - lo),
    )
    bounds = ellipticity_scan(cut, n_speed=scan_grid[0], n_force=scan_grid[1])
    return replace(cut, ellipticity_bounds=bounds)


# ------------------------------------------------------------- energy density


@dataclass(frozen=True, eq=False)
class EnergyDensity:
    """G(Lambda, psi) = 1/2 * integral_0^Lambda rho~(v, psi) dv.

    Integration splits at the branch junctions.  The physical part uses the
    law's closed form when available (generic laws fall back to fixed-order
    Gauss-Legendre); the band part is the closed-form integral of the
    mass-flux construction (2 * integral m(s) ds with m piecewise quadratic
    in the speed); the plateau part is linear.
    """

    cutoff: CutoffDensity
    quadrature_order: int = 32

    def _physical_integral(self, w, upper):
        """integral_0^upper enthalpy_inverse(w - v/2) dv, elementwise."""
        law = self.cutoff.law
        if isinstance(law, gas.GammaLaw):
            g, k = law.gamma, law.kappa
            m = 1.0 / (g - 1.0)
            c = 1.0 + (g - 1.0) * w / (k * g)
            b = (g - 1.0) / (2.0 * k * g)
            return (c ** (m + 1.0) - (c - b * upper) ** (m + 1.0)) / (b * (m + 1.0))
        if isinstance(law, gas.Isothermal):
            k = law.kappa
            return 2.0 * k * np.exp(w / k) * (1.0 - np.exp(-upper / (2.0 * k)))
        nodes, weights = np.polynomial.legendre.leggauss(self.quadrature_order)
        half = 0.5 * upper
        pts = half[..., None] * (nodes + 1.0)
        vals = np.asarray(
            gas.enthalpy_inverse(law, w[..., None] - 0.5 * pts), dtype=float
        )
        return half * np.einsum("...q,q->...", vals, weights)

    @staticmethod
    def _ramp_integral(m_start, ell_start, ell_end, width, x):
        """integral_0^x of the quadratic mass flux over one linear-ell ramp."""
        slope = np.where(width > 0.0, (ell_end - ell_start) / np.maximum(width, 1e-300), 0.0)
        return m_start * x + 0.5 * ell_start * x**2 + slope * x**3 / 6.0

    def _band_integral(self, band, s_upper):
        """2 * integral_{s1}^{s_upper} m(s) ds (the band part of int rho~ dv)."""
        s1, sa, sb, s2, ell1, ell_star, ell2, m1, ma, mb = band
        xa = np.clip(s_upper, s1, sa) - s1
        part = self._ramp_integral(m1, ell1, ell_star, sa - s1, xa)
        xb = np.clip(s_upper, sa, sb) - sa
        part = part + ma * xb + 0.5 * ell_star * xb**2
        xc = np.clip(s_upper, sb, s2) - sb
        part = part + self._ramp_integral(mb, ell_star, ell2, s2 - sb, xc)
        return 2.0 * part

    def evaluate(self, speed_sq, psi):
        """Return (G, G_v, G_vw) at (Lambda, psi) = (speed_sq, psi)."""
        lam = np.asarray(speed_sq, dtype=float)
        w = np.asarray(psi, dtype=float)
        cut = self.cutoff
        cut._check_range(w)
        lam, w = np.broadcast_arrays(lam, w)
        band = cut._band(w)
        s1, s2 = band[0], band[3]
        v1 = s1**2
        v2 = s2**2

        part_phys = self._physical_integral(w, np.minimum(lam, v1))
        s_upper = np.sqrt(np.clip(lam, v1, v2))
        part_mid = self._band_integral(band, s_upper)
        part_plat = cut.plateau * np.maximum(lam - v2, 0.0)

        value, _, d_w = (np.asarray(x) for x in cut.evaluate(lam, w))
        g_val = 0.5 * (part_phys + part_mid + part_plat)
        return gas._ret(
            speed_sq if np.ndim(speed_sq) else psi, g_val, 0.5 * value, 0.5 * d_w
        )


# ------------------------------------------------------------- coefficients


def coefficient_matrix(cut, velocity, psi):
    """Second-derivative coefficient matrix and the force coefficient scalar.

    Returns (a, rho_w) where a = rho~ I + 2 rho~_v p (x) p for the velocity
    vector p, and rho_w = d rho~/d psi, the scalar multiplying grad(psi) in
    the first-order term.
    """
    p = np.asarray(velocity, dtype=float)
    v = float(np.dot(p, p))
    value, d_v, d_w = cut.evaluate(v, float(psi))
    a = value * np.eye(len(p)) + 2.0 * d_v * np.outer(p, p)
    return a, float(d_w)


def ellipticity_scan(
    cut, n_speed=_DEFAULT_SCAN_GRID[0], n_force=_DEFAULT_SCAN_GRID[1], speed_sq_max=None
):
    """Extreme eigenvalues of the coefficient matrix over a (v, w) grid.

    The eigenvalues of a(p, w) are rho~ (transverse, multiplicity dim-1) and
    rho~ + 2 rho~_v |p|^2 (along p), so the scan is dimension-independent.
    Raises EllipticityError if the minimum is not positive.
    """
    lo, hi = cut.force_range
    ws = np.linspace(lo, hi, n_force) if hi > lo else np.asarray([lo])
    if speed_sq_max is None:
        q2 = np.asarray(gas.critical_speed_sq(cut.law, ws, check=False), dtype=float)
        speed_sq_max = 4.0 * float(np.max(q2))
    vs = np.linspace(0.0, speed_sq_max, n_speed)
    vv, ww = np.meshgrid(vs, ws, indexing="ij")
    value, d_v, _ = cut.evaluate(vv.ravel(), ww.ravel())
    along = value + 2.0 * d_v * vv.ravel()
    lam_min = float(min(np.min(value), np.min(along)))
    lam_max = float(max(np.max(value), np.max(along)))
    if lam_min <= 0.0:
        raise EllipticityError(
            f"coefficient matrix loses ellipticity: min eigenvalue {lam_min:g}"
        )
    return lam_min, lam_max
