"""Homentropic gas closures.

A gas law fixes the barotropic pressure function p(rho) and everything the
solver derives from it: the specific enthalpy

    enthalpy(rho) = integral_1^rho p'(tau)/tau dtau,

its inverse (which turns the Bernoulli relation
``speed_sq/2 + enthalpy(rho) = psi`` into a density formula), the sonic head

    sonic_head(rho) = p'(rho)/2 + enthalpy(rho),

the local sound speed sqrt(p'(rho)), and the critical speed at which the
flow turns sonic for a given force-potential value psi.

Every law must satisfy, on its sampled density range,

    p'(rho) > 0    and    2 p'(rho) + rho p''(rho) > 0,

which makes enthalpy and sonic head strictly increasing and hence
invertible.  Built-in laws: :class:`GammaLaw` (p = kappa rho^gamma with
gamma > 1), :class:`Isothermal` (p = kappa rho) and :class:`Tabulated`
(monotone cubic through user samples).

All evaluation functions accept scalars or numpy arrays and are pure;
laws are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, interpolate

from .errors import (
    AdmissibilityError,
    DomainError,
    LawError,
    ParseError,
    RangeError,
)

__all__ = [
    "GasLaw",
    "GammaLaw",
    "Isothermal",
    "Tabulated",
    "BernoulliState",
    "AdmissibilityReport",
    "pressure",
    "sound_speed",
    "enthalpy",
    "enthalpy_inverse",
    "sonic_head",
    "sonic_density",
    "critical_speed",
    "critical_speed_sq",
    "bernoulli_density",
    "check_admissible",
    "load_tabulated",
]

_CONDITION_SAMPLES = 1000
_BISECT_WIDTH = 1e-6
_INVERT_RTOL = 1e-12
_FLOOR_SLACK = 1.0 - 1e-12


def _is_scalar(x):
    return np.ndim(x) == 0


def _ret(template, *outs):
    """Match the scalar-ness of the input."""
    if _is_scalar(template):
        outs = tuple(float(np.asarray(o)) for o in outs)
    return outs if len(outs) > 1 else outs[0]


class GasLaw:
    """Base pressure-density closure.

    Subclasses provide the raw pressure evaluation and, where available,
    closed forms for the enthalpy and the two inverse maps.  Missing closed
    forms fall back to bracketed bisection refined by Newton.
    """

    rho_floor: float
    rho_max: float

    # ------------------------------------------------------------------ hooks
    def _pressure(self, rho):
        raise NotImplementedError

    def _enthalpy(self, rho):
        raise NotImplementedError

    def _enthalpy_inverse(self, y):
        return None

    def _sonic_density(self, psi):
        return None

    def enthalpy_sup(self) -> float:
        """Limit of the enthalpy at the dense end of the law's range."""
        raise NotImplementedError

    def sonic_head_inf(self) -> float:
        """Limit of the sonic head at the vacuum end of the law's range."""
        raise NotImplementedError

    # ------------------------------------------------------------- validation
    def _validate_conditions(self, n=_CONDITION_SAMPLES):
        rho = np.geomspace(self.rho_floor, self.rho_max, n)
        p, dp, ddp = self._pressure(rho)
        if not np.all(dp > 0.0):
            raise LawError("p'(rho) must be positive on the sampled density range")
        if not np.all(2.0 * dp + rho * ddp > 0.0):
            raise LawError(
                "2 p'(rho) + rho p''(rho) must be positive on the sampled density range"
            )


@dataclass(frozen=True, eq=False)
class GammaLaw(GasLaw):
    """Polytropic law p = kappa * rho**gamma with gamma > 1."""

    kappa: float
    gamma: float
    rho_floor: float = 1e-8
    rho_max: float = 1e9

    def __post_init__(self):
        if not self.kappa > 0.0:
            raise LawError("kappa must be positive")
        if not self.gamma > 1.0:
            raise LawError("gamma must exceed 1")
        if not 0.0 < self.rho_floor < self.rho_max:
            raise LawError("rho_floor must satisfy 0 < rho_floor < rho_max")
        self._validate_conditions()

    def _pressure(self, rho):
        k, g = self.kappa, self.gamma
        p = k * rho**g
        dp = k * g * rho ** (g - 1.0)
        ddp = k * g * (g - 1.0) * rho ** (g - 2.0)
        return p, dp, ddp

    def _enthalpy(self, rho):
        k, g = self.kappa, self.gamma
        return k * g / (g - 1.0) * (rho ** (g - 1.0) - 1.0)

    def _enthalpy_inverse(self, y):
        k, g = self.kappa, self.gamma
        return (1.0 + (g - 1.0) * y / (k * g)) ** (1.0 / (g - 1.0))

    def _sonic_density(self, psi):
        k, g = self.kappa, self.gamma
        scale = k * g * (g + 1.0) / (2.0 * (g - 1.0))
        return ((psi + k * g / (g - 1.0)) / scale) ** (1.0 / (g - 1.0))

    def enthalpy_sup(self):
        return math.inf

    def sonic_head_inf(self):
        return -self.kappa * self.gamma / (self.gamma - 1.0)


@dataclass(frozen=True, eq=False)
class Isothermal(GasLaw):
    """Linear law p = kappa * rho (constant sound speed sqrt(kappa))."""

    kappa: float
    rho_floor: float = 1e-8
    rho_max: float = 1e9

    def __post_init__(self):
        if not self.kappa > 0.0:
            raise LawError("kappa must be positive")
        if not 0.0 < self.rho_floor < self.rho_max:
            raise LawError("rho_floor must satisfy 0 < rho_floor < rho_max")
        self._validate_conditions()

    def _pressure(self, rho):
        p = self.kappa * rho
        dp = np.full_like(np.asarray(rho, dtype=float), self.kappa)
        ddp = np.zeros_like(dp)
        return p, dp, ddp

    def _enthalpy(self, rho):
        return self.kappa * np.log(rho)

    def _enthalpy_inverse(self, y):
        return np.exp(np.asarray(y, dtype=float) / self.kappa)

    def _sonic_density(self, psi):
        return np.exp(np.asarray(psi, dtype=float) / self.kappa - 0.5)

    def enthalpy_sup(self):
        return math.inf

    def sonic_head_inf(self):
        return -math.inf


class Tabulated(GasLaw):
    """Law interpolated from strictly increasing (rho, p) samples.

    Uses a monotone cubic (Fritsch-Carlson) interpolant so p' > 0 survives
    interpolation; both structural conditions are re-checked on a 1000-point
    grid at construction.  The table must straddle the reference density
    rho = 1.  The enthalpy integral of p'(tau)/tau is evaluated exactly: on
    each knot interval the interpolant is cubic, so the integrand is
    A/tau + B + C tau with a closed antiderivative, accumulated once at
    construction.  Inverses run bracketed bisection refined by Newton.
    """

    def __init__(self, samples, rho_floor=None):
        samples = np.asarray(samples, dtype=float)
        if samples.ndim != 2 or samples.shape[1] != 2 or samples.shape[0] < 4:
            raise LawError("tabulated law needs at least 4 (rho, p) sample pairs")
        rho, p = samples[:, 0], samples[:, 1]
        if not np.all(rho > 0.0):
            raise LawError("tabulated densities must be positive")
        if not np.all(np.diff(rho) > 0.0):
            raise LawError("tabulated densities must be strictly increasing")
        if not np.all(np.diff(p) > 0.0):
            raise LawError("tabulated pressures must be strictly increasing")
        if not (rho[0] <= 1.0 <= rho[-1]):
            raise LawError("the table must straddle the reference density rho = 1")
        self.samples = samples
        self._knots = rho
        self._pchip = interpolate.PchipInterpolator(rho, p)
        self._d1 = self._pchip.derivative(1)
        self._d2 = self._pchip.derivative(2)
        # exact antiderivative of p'(tau)/tau per interval:
        # with p' = A + B tau + C tau^2, it is A ln(tau) + B tau + C tau^2/2
        c = self._pchip.c  # (4, m) local cubic coefficients in (tau - x_i)
        xi = rho[:-1]
        self._iA = 3.0 * c[0] * xi**2 - 2.0 * c[1] * xi + c[2]
        self._iB = 2.0 * c[1] - 6.0 * c[0] * xi
        self._iC = 3.0 * c[0]

        def anti(idx, tau):
            return (
                self._iA[idx] * np.log(tau)
                + self._iB[idx] * tau
                + 0.5 * self._iC[idx] * tau**2
            )

        self._anti = anti
        per_interval = anti(np.arange(len(xi)), rho[1:]) - anti(
            np.arange(len(xi)), rho[:-1]
        )
        cumulative = np.concatenate(([0.0], np.cumsum(per_interval)))
        k1 = int(np.searchsorted(rho, 1.0, side="right") - 1)
        k1 = min(max(k1, 0), len(xi) - 1)
        h_at_1 = cumulative[k1] + anti(k1, 1.0) - anti(k1, rho[k1])
        self._cum = cumulative - h_at_1
        self.rho_floor = float(rho[0]) if rho_floor is None else float(rho_floor)
        if not rho[0] <= self.rho_floor < rho[-1]:
            raise LawError("rho_floor must lie inside the tabulated range")
        self.rho_max = float(rho[-1])
        self._validate_conditions()

    def _pressure(self, rho):
        r = np.asarray(rho, dtype=float)
        if np.any(r > self.rho_max * (1.0 + 1e-12)):
            raise DomainError("density beyond the tabulated range")
        r = np.minimum(r, self.rho_max)
        return self._pchip(r), self._d1(r), self._d2(r)

    def _enthalpy(self, rho):
        r = np.minimum(np.asarray(rho, dtype=float), self.rho_max)
        idx = np.clip(
            np.searchsorted(self._knots, r, side="right") - 1, 0, len(self._knots) - 2
        )
        return self._cum[idx] + self._anti(idx, r) - self._anti(idx, self._knots[idx])

    def enthalpy_sup(self):
        return float(self._enthalpy(self.rho_max))

    def sonic_head_inf(self):
        _, dp, _ = self._pressure(np.asarray(self.rho_floor))
        return float(dp / 2.0 + self._enthalpy(self.rho_floor))


def load_tabulated(path, rho_floor=None):
    """Load a tabulated law from two-column ASCII "rho pressure" (# comments)."""
    try:
        data = np.loadtxt(path, comments="#", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ParseError(f"cannot read gas table {path!r}: {exc}") from exc
    if data.shape[1] != 2:
        raise ParseError(f"gas table {path!r} must have exactly two columns")
    return Tabulated(data, rho_floor=rho_floor)


# --------------------------------------------------------------------- states


@dataclass(frozen=True)
class BernoulliState:
    """Pointwise flow state tied together by the Bernoulli relation."""

    speed_sq: float
    psi: float
    rho: float
    mach: float


@dataclass(frozen=True)
class AdmissibilityReport:
    """Admissible band of force-potential values and the checked margins."""

    psi_min: float
    psi_max: float
    band: tuple
    margin_low: float
    margin_high: float


# ------------------------------------------------------------------ inversion


def _invert_increasing(fun, dfun, y, lo, hi, rtol=_INVERT_RTOL):
    """Invert a strictly increasing map on [lo, hi], vectorized.

    Bisection narrows the bracket to width ~1e-6, then Newton polishes to
    |fun(x) - y| <= rtol * (1 + |y|).  Newton iterates are clipped to the
    bracket so convergence never escapes it.
    """
    y = np.asarray(y, dtype=float)
    a = np.full(y.shape, lo, dtype=float)
    b = np.full(y.shape, hi, dtype=float)
    n_bisect = max(1, int(math.ceil(math.log2(max((hi - lo) / _BISECT_WIDTH, 2.0)))))
    for _ in range(n_bisect):
        mid = 0.5 * (a + b)
        below = fun(mid) < y
        a = np.where(below, mid, a)
        b = np.where(below, b, mid)
    x = 0.5 * (a + b)
    tol = rtol * (1.0 + np.abs(y))
    for _ in range(30):
        r = fun(x) - y
        if np.all(np.abs(r) <= tol):
            break
        d = dfun(x)
        step = np.where(d > 0.0, r / np.where(d > 0.0, d, 1.0), 0.0)
        x = np.clip(x - step, a, b)
    r = fun(x) - y
    if not np.all(np.abs(r) <= 10.0 * tol):
        raise RangeError("inversion failed to reach the requested residual")
    return x


# ----------------------------------------------------------------- operations


def pressure(law, rho):
    """Return (p, p', p'') at the given density.

    Raises DomainError below the law's density floor and LawError if either
    structural condition fails at the requested density.
    """
    r = np.asarray(rho, dtype=float)
    if np.any(r < law.rho_floor * _FLOOR_SLACK):
        raise DomainError(
            f"density below the evaluation floor {law.rho_floor:g}"
        )
    p, dp, ddp = law._pressure(r)
    if np.any(dp <= 0.0) or np.any(2.0 * dp + r * ddp <= 0.0):
        raise LawError("pressure law loses its structural conditions at this density")
    return _ret(rho, p, dp, ddp)


def sound_speed(law, rho):
    """Local sound speed sqrt(p'(rho))."""
    _, dp, _ = pressure(law, np.asarray(rho, dtype=float))
    return _ret(rho, np.sqrt(dp))


def enthalpy(law, rho):
    """The integral of p'(tau)/tau from the reference density 1 to rho."""
    r = np.asarray(rho, dtype=float)
    if np.any(r < law.rho_floor * _FLOOR_SLACK):
        raise DomainError(
            f"density below the evaluation floor {law.rho_floor:g}"
        )
    return _ret(rho, law._enthalpy(r))


def enthalpy_inverse(law, y):
    """Density with the given enthalpy; vacuum approach raises RangeError."""
    yv = np.asarray(y, dtype=float)
    h_lo = float(law._enthalpy(np.asarray(law.rho_floor)))
    h_hi = float(law._enthalpy(np.asarray(law.rho_max)))
    tol = 1e-12 * (1.0 + np.abs(yv))
    if np.any(yv < h_lo - tol):
        raise RangeError(
            f"enthalpy value below the floor level {h_lo:g} (vacuum approach)"
        )
    if np.any(yv > h_hi + tol):
        raise RangeError(
            f"enthalpy value above the ceiling level {h_hi:g} (density overflow)"
        )
    closed = law._enthalpy_inverse(yv)
    if closed is not None:
        out = np.clip(closed, law.rho_floor, law.rho_max)
    else:
        out = _invert_increasing(
            law._enthalpy,
            lambda r: law._pressure(r)[1] / r,
            np.clip(yv, h_lo, h_hi),
            law.rho_floor,
            law.rho_max,
        )
    return _ret(y, out)


def sonic_head(law, rho):
    """p'(rho)/2 + enthalpy(rho); the psi value making rho the sonic density."""
    r = np.asarray(rho, dtype=float)
    _, dp, _ = pressure(law, r)
    return _ret(rho, dp / 2.0 + law._enthalpy(r))


def sonic_density(law, psi):
    """Invert the sonic head: the density at which flow with head psi is sonic."""
    pv = np.asarray(psi, dtype=float)
    lo = law.sonic_head_inf()
    hi = law.enthalpy_sup()
    if np.any(pv <= lo) or np.any(pv >= hi):
        raise AdmissibilityError(
            f"psi outside the admissible band ({lo:g}, {hi:g})"
        )
    closed = law._sonic_density(pv)
    if closed is not None:
        out = np.asarray(closed, dtype=float)
        if np.any(out < law.rho_floor * _FLOOR_SLACK):
            raise AdmissibilityError(
                "sonic density falls below the density floor (vacuum approach)"
            )
    else:

        def head(r):
            _, dp, _ = law._pressure(r)
            return dp / 2.0 + law._enthalpy(r)

        def dhead(r):
            _, dp, ddp = law._pressure(r)
            return ddp / 2.0 + dp / r

        head_lo = head(np.asarray(law.rho_floor))
        head_hi = head(np.asarray(law.rho_max))
        if np.any(pv < head_lo) or np.any(pv > head_hi):
            raise AdmissibilityError(
                "psi outside the sonic-head range of the tabulated law"
            )
        out = _invert_increasing(head, dhead, pv, law.rho_floor, law.rho_max)
    return _ret(psi, out)


def _critical_speed_sq_with_slope(law, psi):
    """Squared critical speed and its derivative with respect to psi."""
    pv = np.asarray(psi, dtype=float)
    rho_star = np.asarray(sonic_density(law, pv), dtype=float)
    _, dp, ddp = pressure(law, rho_star)
    q2 = 2.0 * (pv - law._enthalpy(rho_star))
    dq2 = 2.0 * rho_star * ddp / (rho_star * ddp + 2.0 * dp)
    return q2, dq2


def critical_speed_sq(law, psi, check=True):
    """Squared critical speed 2*psi - 2*enthalpy(sonic_density(psi)).

    With ``check`` the sonic state is verified to sit at Mach 1 to 1e-8.
    """
    q2, _ = _critical_speed_sq_with_slope(law, psi)
    if check:
        pv = np.asarray(psi, dtype=float)
        rho_b = np.asarray(enthalpy_inverse(law, pv - q2 / 2.0), dtype=float)
        _, dp, _ = pressure(law, rho_b)
        mach = np.sqrt(np.maximum(q2, 0.0) / dp)
        if np.any(np.abs(mach - 1.0) > 1e-8):
            raise LawError("critical state failed the Mach-1 consistency check")
    return _ret(psi, q2)


def critical_speed(law, psi):
    """Speed at which flow with force-potential value psi turns sonic."""
    return _ret(psi, np.sqrt(np.asarray(critical_speed_sq(law, psi), dtype=float)))


def bernoulli_density(law, speed_sq, psi):
    """Full Bernoulli state at the given squared speed and potential value."""
    v = np.asarray(speed_sq, dtype=float)
    if np.any(v < 0.0):
        raise DomainError("speed_sq must be nonnegative")
    rho = np.asarray(enthalpy_inverse(law, np.asarray(psi, dtype=float) - v / 2.0))
    _, dp, _ = pressure(law, rho)
    mach = np.sqrt(v / dp)
    if _is_scalar(speed_sq) and _is_scalar(psi):
        return BernoulliState(
            speed_sq=float(v), psi=float(psi), rho=float(rho), mach=float(mach)
        )
    return BernoulliState(speed_sq=v, psi=np.asarray(psi, dtype=float), rho=rho, mach=mach)


def check_admissible(law, psi_min, psi_max):
    """Check a potential range against the admissible band of the law.

    The band is (sonic-head limit at vacuum, enthalpy limit at infinity);
    the range must sit strictly inside.  Raises AdmissibilityError naming
    the violated side, otherwise returns the band and margins.
    """
    if psi_min > psi_max:
        raise DomainError("psi_min must not exceed psi_max")
    lo = law.sonic_head_inf()
    hi = law.enthalpy_sup()
    if not psi_min > lo:
        raise AdmissibilityError(
            f"lower side: psi_min {psi_min:g} does not exceed the vacuum-side limit {lo:g}"
        )
    if not psi_max < hi:
        raise AdmissibilityError(
            f"upper side: psi_max {psi_max:g} is not below the dense-side limit {hi:g}"
        )
    return AdmissibilityReport(
        psi_min=float(psi_min),
        psi_max=float(psi_max),
        band=(lo, hi),
        margin_low=float(psi_min - lo),
        margin_high=float(hi - psi_max),
    )
