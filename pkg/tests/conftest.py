import numpy as np
import pytest

from subflow import forces, gas, mesh, solver


@pytest.fixture(scope="session")
def gamma_law():
    return gas.GammaLaw(kappa=1.0, gamma=2.0)


@pytest.fixture(scope="session")
def isothermal_law():
    return gas.Isothermal(kappa=1.0)


@pytest.fixture(scope="session")
def annulus_small():
    # the 256-triangle workhorse
    return mesh.generate_annulus_2d(1.0, 10.0, 8, 16, grading=1.3)


@pytest.fixture(scope="session")
def annulus_medium():
    return mesh.generate_annulus_2d(1.0, 10.0, 16, 32, grading=1.15)


@pytest.fixture(scope="session")
def point_source_2d():
    return forces.PointSourcePotential(sources=(((0.0, 0.0), 0.5),), dimension=2)


@pytest.fixture(scope="session")
def benchmark_problem(gamma_law, point_source_2d, annulus_medium):
    """gamma-law flow past the unit circle with a central 1/r force well."""
    return solver.Problem(
        law=gamma_law, force=point_source_2d, mesh=annulus_medium, tol=1e-11
    )


def l2_velocity_diff(mesh_, u1, u2):
    d = u1 - u2
    return float(np.sqrt(mesh_.volumes @ np.einsum("cd,cd->c", d, d)))
