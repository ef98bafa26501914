import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from subflow import cutoff, gas
from subflow.errors import DomainError, EllipticityError

GAMMA = gas.GammaLaw(kappa=1.0, gamma=2.0)
ISO = gas.Isothermal(kappa=1.0)


@pytest.fixture(scope="module")
def cut_gamma_const():
    return cutoff.build_cutoff(GAMMA, (0.0, 0.0), 0.1)


@pytest.fixture(scope="module")
def cut_gamma_range():
    return cutoff.build_cutoff(GAMMA, (0.0, 0.5), 0.1)


@pytest.fixture(scope="module")
def cut_iso_range():
    return cutoff.build_cutoff(ISO, (-0.3, 0.3), 0.1)


# ----------------------------------------------------------------- plateau


def test_plateau_constant_gamma_frozen(cut_gamma_const):
    # rho(v - 2w) = 1 - v/4 at v = 0.81 * 4/3 = 1.08 gives 0.73 exactly
    assert cutoff.plateau_constant(GAMMA, (0.0, 0.0), 0.1) == pytest.approx(0.73, abs=1e-14)


def test_plateau_constant_isothermal_frozen():
    # q_cr = 1, so the plateau is h_inv(w - 0.405) at the collapsed range
    val = cutoff.plateau_constant(ISO, (0.5, 0.5), 0.1)
    assert val == pytest.approx(math.exp(0.095), rel=1e-13)


def test_plateau_singleton_is_single_evaluation():
    for w in (-0.2, 0.0, 0.4):
        direct = float(
            gas.enthalpy_inverse(
                GAMMA, w - 0.5 * 0.81 * gas.critical_speed_sq(GAMMA, w)
            )
        )
        assert cutoff.plateau_constant(GAMMA, (w, w), 0.1) == pytest.approx(direct, rel=1e-14)


def test_plateau_matches_brute_force():
    # oracle: 1e5 uniform samples over the force range
    rng = (0.0, 0.5)
    ws = np.linspace(*rng, 100_000)
    q2 = np.asarray(gas.critical_speed_sq(GAMMA, ws, check=False))
    brute = float(
        np.max(np.asarray(gas.enthalpy_inverse(GAMMA, ws - 0.5 * 0.81 * q2)))
    )
    assert cutoff.plateau_constant(GAMMA, rng, 0.1) == pytest.approx(brute, abs=1e-8)


def test_plateau_rejects_bad_theta():
    with pytest.raises(DomainError):
        cutoff.plateau_constant(GAMMA, (0.0, 0.0), 0.7)


# ------------------------------------------------------------- branch values


def test_physical_branch_frozen_values(cut_gamma_const):
    value, dv, dw = cut_gamma_const.evaluate(0.25, 0.0)
    assert value == pytest.approx(0.9375, abs=1e-14)
    assert dv == pytest.approx(-0.25, abs=1e-14)
    assert dw == pytest.approx(0.5, abs=1e-14)


def test_plateau_branch_frozen_values(cut_gamma_const):
    value, dv, dw = cut_gamma_const.evaluate(2.0, 0.0)
    assert value == pytest.approx(0.73, abs=1e-14)
    assert dv == 0.0
    assert dw == 0.0


def test_zero_speed_gives_stagnation_density(cut_gamma_range):
    for w in (0.0, 0.25, 0.5):
        value, _, _ = cut_gamma_range.evaluate(0.0, w)
        assert value == pytest.approx(float(gas.enthalpy_inverse(GAMMA, w)), rel=1e-14)


@settings(max_examples=300, deadline=None)
@given(
    st.floats(min_value=0.0, max_value=1.0),
    st.floats(min_value=0.0, max_value=0.5),
)
def test_branch_agreement_on_physical_side(frac, w):
    cut = _branch_cut()
    v1 = float(cut.physical_speed_sq_limit(w))
    v = frac * v1
    value, _, _ = cut.evaluate(v, w)
    assert abs(value - float(gas.enthalpy_inverse(GAMMA, w - v / 2.0))) < 1e-12


_BRANCH_CUT = None


def _branch_cut():
    global _BRANCH_CUT
    if _BRANCH_CUT is None:
        _BRANCH_CUT = cutoff.build_cutoff(GAMMA, (0.0, 0.5), 0.1)
    return _BRANCH_CUT


def test_out_of_range_psi_raises(cut_gamma_const):
    with pytest.raises(DomainError):
        cut_gamma_const.evaluate(0.1, 0.5)


# ------------------------------------------------------------------ junctions


def one_sided_slopes(cut, vj, w, h):
    """Second-order one-sided quotients from both sides of a junction.

    The blend carries a curvature boundary layer next to the junctions, so
    first-order quotients pick up an O(h f'') bias; the 3-point variant
    cancels it.
    """

    def f(v):
        return cut.evaluate(v, w)[0]

    left = (3.0 * f(vj) - 4.0 * f(vj - h) + f(vj - 2 * h)) / (2.0 * h)
    right = (-3.0 * f(vj) + 4.0 * f(vj + h) - f(vj + 2 * h)) / (2.0 * h)
    return left, right


@pytest.mark.parametrize("theta", [0.1, 0.05, 0.025])
@pytest.mark.parametrize("law,w", [(GAMMA, 0.2), (ISO, -0.1)])
def test_junctions_are_c1(law, w, theta):
    cut = cutoff.build_cutoff(law, (w, w), theta)
    q2 = float(gas.critical_speed_sq(law, w))
    for vj in ((1 - 2 * theta) ** 2 * q2, (1 - theta) ** 2 * q2):
        left, right = one_sided_slopes(cut, vj, w, 1e-7 * (1.0 + vj))
        assert abs(left - right) < 1e-6


def test_monotone_decreasing_for_collapsed_range():
    cut = cutoff.build_cutoff(GAMMA, (0.2, 0.2), 0.05)
    vs = np.linspace(0.0, 3.0, 4000)
    vals = np.asarray(cut.evaluate(vs, np.full_like(vs, 0.2))[0])
    assert np.all(np.diff(vals) <= 1e-13)
    assert vals.min() >= cut.plateau - 1e-13


# ------------------------------------------------------------- derivatives


def test_derivatives_match_finite_differences(cut_gamma_range, cut_iso_range):
    rng = np.random.default_rng(20240817)
    for cut, (wlo, whi) in ((cut_gamma_range, (0.0, 0.5)), (cut_iso_range, (-0.3, 0.3))):
        q2max = float(
            np.max(gas.critical_speed_sq(cut.law, np.linspace(wlo, whi, 16)))
        )
        for _ in range(500):
            v = rng.uniform(0.0, 3.0 * q2max)
            w = rng.uniform(wlo, whi)
            _, dv, dw = cut.evaluate(v, w)
            h = 1e-6 * (1.0 + v)
            fd_v = (cut.evaluate(v + h, w)[0] - cut.evaluate(v - h, w)[0]) / (2 * h)
            hw = 1e-6 * (1.0 + abs(w))
            wl, wr = max(w - hw, wlo), min(w + hw, whi)
            fd_w = (cut.evaluate(v, wr)[0] - cut.evaluate(v, wl)[0]) / (wr - wl)
            assert abs(fd_v - dv) <= 1e-6 * (1.0 + abs(dv))
            assert abs(fd_w - dw) <= 1e-6 * (1.0 + abs(dw))


# ------------------------------------------------------------ energy density


def test_energy_density_trivial_and_frozen(cut_gamma_const):
    dens = cutoff.EnergyDensity(cut_gamma_const)
    g0, gv0, gvw0 = dens.evaluate(0.0, 0.0)
    assert g0 == 0.0
    assert gv0 == pytest.approx(0.5 * cut_gamma_const.evaluate(0.0, 0.0)[0], abs=1e-14)
    # oracle: quadrature of (1/2) * int_0^0.25 (1 - v/4) dv
    g, gv, _ = dens.evaluate(0.25, 0.0)
    assert g == pytest.approx(0.12109375, abs=1e-14)
    assert gv == pytest.approx(0.46875, abs=1e-14)


def test_energy_density_matches_piecewise_quadrature(cut_gamma_range):
    dens = cutoff.EnergyDensity(cut_gamma_range)
    rng = np.random.default_rng(7)
    for _ in range(25):
        lam = rng.uniform(0.0, 4.0)
        w = rng.uniform(0.0, 0.5)
        band = cut_gamma_range._band(np.asarray(w))
        breaks = sorted({float(x) ** 2 for x in band[:4] if float(x) ** 2 < lam})
        edges = [0.0] + breaks + [lam]
        ref = sum(
            integrate.quad(
                lambda t: 0.5 * cut_gamma_range.evaluate(t, w)[0],
                a,
                b,
                epsabs=1e-13,
                epsrel=1e-13,
            )[0]
            for a, b in zip(edges[:-1], edges[1:])
        )
        assert dens.evaluate(lam, w)[0] == pytest.approx(ref, abs=1e-12)


def test_energy_density_v_derivative_identity(cut_gamma_range):
    # G_v must equal rho~/2: finite differences of G against the density
    dens = cutoff.EnergyDensity(cut_gamma_range)
    rng = np.random.default_rng(11)
    for _ in range(200):
        lam = rng.uniform(0.0, 4.0)
        w = rng.uniform(0.0, 0.5)
        h = 1e-6 * (1.0 + lam)
        fd = (dens.evaluate(lam + h, w)[0] - dens.evaluate(lam - h, w)[0]) / (2 * h)
        assert abs(fd - dens.evaluate(lam, w)[1]) < 1e-8


# ---------------------------------------------------------------- coefficients


def test_coefficient_matrix_stagnation_is_isotropic(cut_gamma_const):
    a, _ = cutoff.coefficient_matrix(cut_gamma_const, np.zeros(2), 0.0)
    assert np.allclose(a, cut_gamma_const.evaluate(0.0, 0.0)[0] * np.eye(2), atol=1e-14)


def test_coefficient_matrix_frozen_example(cut_gamma_const):
    a, rho_w = cutoff.coefficient_matrix(cut_gamma_const, np.array([0.5, 0.0]), 0.0)
    assert np.allclose(a, np.diag([0.8125, 0.9375]), atol=1e-14)
    assert rho_w == pytest.approx(0.5, abs=1e-14)


def test_coefficient_matrix_plateau_is_isotropic(cut_gamma_const):
    p = np.array([math.sqrt(2.0), 0.0])
    a, rho_w = cutoff.coefficient_matrix(cut_gamma_const, p, 0.0)
    assert np.allclose(a, 0.73 * np.eye(2), atol=1e-14)
    assert rho_w == 0.0


def test_coefficient_matrix_two_sided_bound(cut_gamma_range):
    rng = np.random.default_rng(5)
    lam_min, lam_max = cut_gamma_range.ellipticity_bounds
    for _ in range(1000):
        p = rng.normal(size=2) * rng.uniform(0, 1.5)
        w = rng.uniform(0.0, 0.5)
        xi = rng.normal(size=2)
        a, _ = cutoff.coefficient_matrix(cut_gamma_range, p, w)
        assert np.allclose(a, a.T)
        quad_form = xi @ a @ xi
        nsq = xi @ xi
        assert lam_min * nsq - 1e-12 <= quad_form <= lam_max * nsq + 1e-12


# ----------------------------------------------------------------- ellipticity


def test_ellipticity_physical_branch_frozen(cut_gamma_const):
    # on the physical branch the along-flow eigenvalue is 1 - 3v/4
    lam_min, lam_max = cutoff.ellipticity_scan(cut_gamma_const, speed_sq_max=0.85)
    assert lam_min == pytest.approx(1.0 - 0.75 * 0.85, abs=1e-12)
    assert lam_max == pytest.approx(1.0, abs=1e-12)


def test_ellipticity_plateau_only():
    cut = cutoff.build_cutoff(GAMMA, (0.0, 0.0), 0.1)
    vs = np.linspace(1.2, 4.0, 50)
    value, dv, _ = cut.evaluate(vs, np.zeros_like(vs))
    along = value + 2.0 * dv * vs
    assert np.allclose(value, 0.73) and np.allclose(along, 0.73)


@pytest.mark.parametrize("theta", [0.1, 0.05, 0.025])
@pytest.mark.parametrize(
    "law,rng_w", [(GAMMA, (0.0, 0.5)), (ISO, (-0.3, 0.3))]
)
def test_ellipticity_positive_across_thetas(law, rng_w, theta):
    cut = cutoff.build_cutoff(law, rng_w, theta)
    lam_min, lam_max = cut.ellipticity_bounds
    assert lam_min > 0.0
    assert lam_max >= lam_min


def test_bad_construction_aborts():
    # a poisoned plateau makes the scan fail and construction must abort
    bad = cutoff.CutoffDensity(
        law=GAMMA, force_range=(0.0, 0.0), theta=0.1, plateau=-0.2
    )
    with pytest.raises(EllipticityError):
        cutoff.ellipticity_scan(bad)
