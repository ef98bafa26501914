import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, optimize

from subflow import gas
from subflow.errors import (
    AdmissibilityError,
    DomainError,
    LawError,
    ParseError,
    RangeError,
)

GAMMA = gas.GammaLaw(kappa=1.0, gamma=2.0)
ISO = gas.Isothermal(kappa=1.0)


# ---------------------------------------------------------------- oracles
# independent routes: adaptive quadrature of the defining integral and
# bracketed bisection on the sonic head


def quad_enthalpy(law, rho):
    val, _ = integrate.quad(
        lambda t: gas.pressure(law, t)[1] / t, 1.0, rho, limit=200
    )
    return val


def bisect_sonic_density(law, psi):
    return optimize.brentq(
        lambda r: gas.sonic_head(law, r) - psi, 1e-8, 1e6, xtol=1e-15, rtol=8.9e-16
    )


def oracle_critical_speed(law, psi):
    rho_star = bisect_sonic_density(law, psi)
    return math.sqrt(2.0 * (psi - quad_enthalpy(law, rho_star)))


# ---------------------------------------------------------------- pressure


def test_pressure_gamma_values():
    assert gas.pressure(GAMMA, 1.0) == (1.0, 2.0, 2.0)
    p, dp, ddp = gas.pressure(GAMMA, 1.5)
    assert (p, dp, ddp) == pytest.approx((2.25, 3.0, 2.0), abs=1e-14)


def test_pressure_isothermal_is_linear():
    assert gas.pressure(ISO, 2.0) == (2.0, 1.0, 0.0)


def test_pressure_below_floor_raises():
    with pytest.raises(DomainError):
        gas.pressure(GAMMA, 1e-12)


def test_bad_law_parameters_raise():
    with pytest.raises(LawError):
        gas.GammaLaw(kappa=-1.0, gamma=2.0)
    with pytest.raises(LawError):
        gas.GammaLaw(kappa=1.0, gamma=1.0)
    with pytest.raises(LawError):
        gas.Isothermal(kappa=0.0)


# ---------------------------------------------------------------- enthalpy


def test_enthalpy_reference_zero():
    for law in (GAMMA, ISO):
        assert gas.enthalpy(law, 1.0) == 0.0


def test_enthalpy_examples_vs_quadrature():
    assert gas.enthalpy(GAMMA, 1.5) == pytest.approx(1.0, abs=1e-13)
    assert gas.enthalpy(GAMMA, 1.5) == pytest.approx(quad_enthalpy(GAMMA, 1.5), abs=1e-12)
    assert gas.enthalpy(ISO, math.e) == pytest.approx(1.0, abs=1e-13)


def test_gamma_enthalpy_matches_quadrature_on_grid():
    rhos = np.geomspace(0.05, 50.0, 100)
    for r in rhos:
        assert gas.enthalpy(GAMMA, float(r)) == pytest.approx(
            quad_enthalpy(GAMMA, float(r)), abs=1e-10
        )


def test_enthalpy_inverse_examples():
    assert gas.enthalpy_inverse(GAMMA, 0.0) == pytest.approx(1.0, abs=1e-14)
    assert gas.enthalpy_inverse(GAMMA, 1.0) == pytest.approx(1.5, abs=1e-13)
    assert gas.enthalpy_inverse(ISO, -0.5) == pytest.approx(math.exp(-0.5), rel=1e-13)


def test_enthalpy_inverse_vacuum_raises():
    with pytest.raises(RangeError):
        gas.enthalpy_inverse(GAMMA, -2.5)  # below the h(0+) = -2 limit


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=-1.8, max_value=18.0))
def test_enthalpy_round_trip(y):
    # stays inside the evaluable band of both laws at default floors
    for law in (GAMMA, ISO):
        rho = gas.enthalpy_inverse(law, y)
        assert abs(gas.enthalpy(law, rho) - y) < 1e-10


def test_monotonicity_on_grids():
    rhos = np.geomspace(0.01, 100.0, 400)
    for law in (GAMMA, ISO):
        h = np.asarray(gas.enthalpy(law, rhos))
        head = np.asarray(gas.sonic_head(law, rhos))
        assert np.all(np.diff(h) > 0)
        assert np.all(np.diff(head) > 0)
    ys = np.linspace(-1.5, 20.0, 300)
    inv = np.asarray(gas.enthalpy_inverse(GAMMA, ys))
    assert np.all(np.diff(inv) > 0)


# ---------------------------------------------------------------- sonic head


def test_sonic_density_examples():
    assert gas.sonic_density(GAMMA, 2.0) == pytest.approx(4.0 / 3.0, abs=1e-13)
    assert gas.sonic_density(GAMMA, 0.0) == pytest.approx(2.0 / 3.0, abs=1e-13)
    assert gas.sonic_density(ISO, 0.5) == pytest.approx(1.0, abs=1e-13)


def test_sonic_density_matches_bisection():
    for psi in (-0.5, 0.0, 1.0, 3.0):
        assert gas.sonic_density(GAMMA, psi) == pytest.approx(
            bisect_sonic_density(GAMMA, psi), abs=1e-11
        )


def test_sonic_density_outside_band_raises():
    with pytest.raises(AdmissibilityError):
        gas.sonic_density(GAMMA, -2.5)


# ------------------------------------------------------------ critical speed


def test_critical_speed_frozen_values():
    # oracle: bisection on the sonic head plus quadrature of the enthalpy
    assert gas.critical_speed(GAMMA, 2.0) == pytest.approx(math.sqrt(8.0 / 3.0), abs=1e-12)
    assert gas.critical_speed(GAMMA, 0.0) == pytest.approx(math.sqrt(4.0 / 3.0), abs=1e-12)
    for psi in (0.0, 2.0):
        assert gas.critical_speed(GAMMA, psi) == pytest.approx(
            oracle_critical_speed(GAMMA, psi), abs=1e-10
        )


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=-15.0, max_value=15.0))
def test_isothermal_critical_speed_is_sound_speed(psi):
    assert gas.critical_speed(ISO, psi) == pytest.approx(1.0, abs=1e-12)
    law = gas.Isothermal(kappa=4.0)
    assert gas.critical_speed(law, psi) == pytest.approx(2.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=-1.9, max_value=20.0))
def test_critical_state_sits_at_mach_one(psi):
    q2 = gas.critical_speed_sq(GAMMA, psi)
    state = gas.bernoulli_density(GAMMA, q2, psi)
    assert abs(state.mach - 1.0) < 1e-8


# ---------------------------------------------------------------- bernoulli


def test_bernoulli_stagnation():
    state = gas.bernoulli_density(GAMMA, 0.0, 0.0)
    assert state.rho == pytest.approx(1.0, abs=1e-14)
    assert state.mach == 0.0


def test_bernoulli_example():
    state = gas.bernoulli_density(GAMMA, 2.0, 2.0)
    assert state.rho == pytest.approx(1.5, abs=1e-13)
    assert state.mach == pytest.approx(math.sqrt(2.0 / 3.0), abs=1e-13)


def test_bernoulli_subsonic_iff_below_critical():
    psi = 1.0
    q_cr = gas.critical_speed(GAMMA, psi)
    assert gas.bernoulli_density(GAMMA, (0.9 * q_cr) ** 2, psi).mach < 1.0
    assert gas.bernoulli_density(GAMMA, (1.05 * q_cr) ** 2, psi).mach > 1.0


def test_bernoulli_cavitation_raises():
    with pytest.raises(RangeError):
        gas.bernoulli_density(GAMMA, 100.0, 0.0)


# -------------------------------------------------------------- admissibility


def test_admissible_band_gamma():
    report = gas.check_admissible(GAMMA, -1.0, 5.0)
    assert report.band[0] == pytest.approx(-2.0, abs=1e-14)
    assert report.band[1] == math.inf
    assert report.margin_low == pytest.approx(1.0, abs=1e-14)


def test_admissible_lower_violation_names_side():
    with pytest.raises(AdmissibilityError, match="lower"):
        gas.check_admissible(GAMMA, -3.0, 0.0)


def test_isothermal_band_is_unbounded():
    report = gas.check_admissible(ISO, -1e6, 1e6)
    assert report.band == (-math.inf, math.inf)


# ----------------------------------------------------------------- tabulated


@pytest.fixture(scope="module")
def table_law():
    rhos = np.geomspace(0.05, 8.0, 220)
    return gas.Tabulated(np.stack([rhos, rhos**2], axis=1))


def test_tabulated_tracks_gamma_law(table_law):
    assert gas.pressure(table_law, 1.5)[0] == pytest.approx(2.25, rel=1e-5)
    assert gas.enthalpy(table_law, 1.5) == pytest.approx(1.0, rel=1e-5)
    assert gas.enthalpy_inverse(table_law, 1.0) == pytest.approx(1.5, rel=1e-5)
    assert gas.critical_speed(table_law, 0.0) == pytest.approx(
        math.sqrt(4.0 / 3.0), rel=1e-5
    )


def test_tabulated_enthalpy_matches_quadrature(table_law):
    # per-interval quadrature: the interpolant derivative has knot kinks
    knots = table_law.samples[:, 0]
    for r in (0.2, 0.7, 1.3, 4.0):
        lo, hi = (1.0, r) if r > 1.0 else (r, 1.0)
        edges = np.concatenate(([lo], knots[(knots > lo) & (knots < hi)], [hi]))
        ref = sum(
            integrate.quad(lambda t: gas.pressure(table_law, t)[1] / t, a, b)[0]
            for a, b in zip(edges[:-1], edges[1:])
        )
        ref = ref if r > 1.0 else -ref
        assert gas.enthalpy(table_law, r) == pytest.approx(ref, abs=1e-10)


def test_tabulated_rejects_bad_tables():
    with pytest.raises(LawError):
        gas.Tabulated([[1.0, 1.0], [2.0, 0.5], [3.0, 2.0], [4.0, 3.0]])
    with pytest.raises(LawError):
        gas.Tabulated([[2.0, 1.0], [3.0, 2.0], [4.0, 3.0], [5.0, 4.0]])  # misses rho=1


def test_tabulated_file_round_trip(tmp_path, table_law):
    path = tmp_path / "gas.txt"
    with open(path, "w") as fh:
        fh.write("# rho pressure\n")
        for r, p in table_law.samples:
            fh.write(f"{r:.17g} {p:.17g}\n")
    loaded = gas.load_tabulated(path)
    assert gas.pressure(loaded, 1.5)[0] == pytest.approx(
        gas.pressure(table_law, 1.5)[0], rel=1e-14
    )


def test_tabulated_bad_file_raises(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("1.0 2.0 3.0\nnot numbers\n")
    with pytest.raises(ParseError):
        gas.load_tabulated(path)
