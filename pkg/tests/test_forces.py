import numpy as np
import pytest

from subflow import forces, mesh
from subflow.errors import DomainError, SingularityError, ValidationError


@pytest.fixture(scope="module")
def shell():
    return mesh.generate_shell_3d(1.0, 10.0, 1, 6)


@pytest.fixture(scope="module")
def newtonian_ball():
    # uniform unit ball of total mass 1
    ball = mesh.generate_ball_3d(1.0, 2, 3)
    return forces.NewtonianBodyPotential(
        body=ball, density=3.0 / (4.0 * np.pi), gravitational_constant=1.0
    )


def test_constant_potential():
    f = forces.ConstantPotential(value=0.0, dimension=3)
    assert forces.potential(f, np.array([3.0, 1.0, -2.0])) == 0.0
    assert np.all(forces.potential_gradient(f, np.array([3.0, 1.0, -2.0])) == 0.0)


def test_point_source_values():
    f = forces.PointSourcePotential(sources=(((0.0, 0.0, 0.0), 1.0),), dimension=3)
    assert forces.potential(f, np.array([0.0, 2.0, 0.0])) == pytest.approx(0.5, abs=1e-15)
    grad = forces.potential_gradient(f, np.array([2.0, 0.0, 0.0]))
    assert np.allclose(grad, [-0.25, 0.0, 0.0], atol=1e-15)


def test_point_source_singularity():
    f = forces.PointSourcePotential(sources=(((0.0, 0.0), 1.0),), dimension=2)
    with pytest.raises(SingularityError):
        forces.potential(f, np.array([0.0, 0.0]))


def test_newtonian_ball_matches_point_mass(newtonian_ball):
    # oracle: exterior potential of a unit mass is 1/|x|
    val = forces.potential(newtonian_ball, np.array([2.0, 0.0, 0.0]))
    assert val == pytest.approx(0.5, abs=1e-3)
    grad = forces.potential_gradient(newtonian_ball, np.array([2.0, 0.0, 0.0]))
    assert np.allclose(grad, [-0.25, 0.0, 0.0], atol=1e-3)


def test_newtonian_ball_high_order_quadrature_oracle(newtonian_ball):
    # oracle: one extra subdivision level on every cell at order 6
    body = newtonian_ball.body
    bary, weights = forces._duffy_rule(6)
    x = np.array([1.7, 0.4, -0.3])
    ref = 0.0
    for i, cell in enumerate(body.cells):
        for child in forces._split_tet(body.vertices[cell]):
            pts, w = forces._tet_quadrature(child, bary, weights)
            ref += newtonian_ball.density[i] * float(
                np.sum(w / np.linalg.norm(x - pts, axis=1))
            )
    val = forces.potential(newtonian_ball, x)
    assert val == pytest.approx(ref, abs=1e-6)


def test_newtonian_exterior_equivalence(newtonian_ball):
    rng = np.random.default_rng(4)
    for _ in range(6):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        r = rng.uniform(1.5, 6.0)
        val = forces.potential(newtonian_ball, r * d)
        assert val == pytest.approx(1.0 / r, rel=2e-3)


def test_newtonian_requires_3d():
    import subflow.errors as errors

    tri = mesh.SimplexMesh(
        vertices=np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
        cells=np.array([[0, 1, 2]]),
    )
    with pytest.raises(errors.GeometryError):
        forces.NewtonianBodyPotential(body=tri, density=1.0)


def test_radial_profile_flat_and_gradient():
    f = forces.RadialPotential(samples=np.array([[1.0, 0.0], [10.0, 0.0]]), dimension=2)
    assert forces.potential(f, np.array([3.0, 4.0])) == 0.0
    f2 = forces.RadialPotential(
        samples=np.array([[1.0, 1.0], [2.0, 0.5], [5.0, 0.2], [10.0, 0.1]]), dimension=2
    )
    x = np.array([2.0, 1.5])
    g = forces.potential_gradient(f2, x)
    h = 1e-6
    fd = np.array(
        [
            (forces.potential(f2, x + h * e) - forces.potential(f2, x - h * e)) / (2 * h)
            for e in np.eye(2)
        ]
    )
    assert np.allclose(g, fd, rtol=1e-6, atol=1e-9)


def test_radial_profile_file_load(tmp_path):
    path = tmp_path / "profile.txt"
    path.write_text("# r psi\n1.0 0.3\n4.0 0.2\n7.0 0.1\n10.0 0.05\n")
    f = forces.load_radial_profile(path, dimension=2)
    assert forces.potential(f, np.array([4.0, 0.0])) == pytest.approx(0.2, abs=1e-12)


def test_gradient_consistency_all_kinds(shell, newtonian_ball):
    rng = np.random.default_rng(99)
    kinds = [
        forces.PointSourcePotential(sources=(((0.0, 0.0, 0.0), 0.7),), dimension=3),
        forces.RadialPotential(
            samples=np.array([[1.0, 1.0], [3.0, 0.4], [6.0, 0.2], [11.0, 0.1]]),
            dimension=3,
        ),
    ]
    for f in kinds:
        for _ in range(100):
            d = rng.normal(size=3)
            x = d / np.linalg.norm(d) * rng.uniform(1.5, 9.0)
            g = forces.potential_gradient(f, x)
            h = 1e-5
            fd = np.array(
                [
                    (forces.potential(f, x + h * e) - forces.potential(f, x - h * e))
                    / (2 * h)
                    for e in np.eye(3)
                ]
            )
            assert np.linalg.norm(fd - g) <= 1e-6 * (1.0 + np.linalg.norm(g))
    # the Newtonian body is expensive: a handful of points suffices
    for _ in range(5):
        d = rng.normal(size=3)
        x = d / np.linalg.norm(d) * rng.uniform(1.5, 5.0)
        g = forces.potential_gradient(newtonian_ball, x)
        h = 1e-5
        fd = np.array(
            [
                (
                    forces.potential(newtonian_ball, x + h * e)
                    - forces.potential(newtonian_ball, x - h * e)
                )
                / (2 * h)
                for e in np.eye(3)
            ]
        )
        assert np.linalg.norm(fd - g) <= 1e-6 * (1.0 + np.linalg.norm(g))


def test_conservative_loop_integrals():
    # closed polygonal loops: the integral of the gradient must telescope away
    f = forces.PointSourcePotential(sources=(((0.0, 0.0, 0.0), 0.7),), dimension=3)
    rng = np.random.default_rng(31)
    nodes, weights = np.polynomial.legendre.leggauss(24)
    for _ in range(20):
        pts = rng.normal(size=(6, 3))
        pts = pts / np.linalg.norm(pts, axis=1)[:, None] * rng.uniform(2.0, 8.0, size=(6, 1))
        loop = 0.0
        for a, b in zip(pts, np.roll(pts, -1, axis=0)):
            mid = 0.5 * (a + b) + 0.5 * (b - a) * nodes[:, None]
            g = forces.potential_gradient(f, mid)
            loop += 0.5 * float(weights @ (g @ (b - a)))
        assert abs(loop) < 1e-8


def test_psi_range_annulus(shell):
    f = forces.PointSourcePotential(sources=(((0.0, 0.0, 0.0), 1.0),), dimension=3)
    lo, hi = forces.psi_range(f, shell)
    assert 0.09 < lo < 0.11
    assert 0.9 < hi < 1.05


def test_psi_range_constant(shell):
    f = forces.ConstantPotential(value=2.0, dimension=3)
    assert forces.psi_range(f, shell) == (2.0, 2.0)


def test_singularity_validation(shell):
    inside_flow = forces.PointSourcePotential(
        sources=(((0.0, 0.0, 3.0), 1.0),), dimension=3
    )
    with pytest.raises(ValidationError):
        forces.validate_singularities(inside_flow, shell)
    forces.validate_singularities(
        forces.PointSourcePotential(sources=(((0.0, 0.0, 0.0), 1.0),), dimension=3),
        shell,
    )


def test_decay_report_constant(shell):
    rep = forces.decay_report(forces.ConstantPotential(value=1.0, dimension=3), shell, 4.0, 1.0)
    assert rep.d1_norm == 0.0
    assert rep.weighted_grad_norm == 0.0
    assert not rep.exponent_defined


def test_decay_report_point_source(shell):
    f = forces.PointSourcePotential(sources=(((0.0, 0.0, 0.0), 1.0),), dimension=3)
    rep = forces.decay_report(f, shell, 4.0, 1.0)
    assert rep.fitted_exponent == pytest.approx(-2.0, abs=0.05)
    assert rep.predicted_beta_prime == pytest.approx(0.75, abs=1e-14)
    assert rep.d1_norm > 0.0


def test_decay_report_newtonian(shell, newtonian_ball):
    rep = forces.decay_report(newtonian_ball, shell, 4.0, 1.0)
    assert rep.fitted_exponent == pytest.approx(-2.0, abs=0.1)


def test_decay_report_preconditions(shell):
    f = forces.ConstantPotential(value=0.0, dimension=3)
    with pytest.raises(DomainError):
        forces.decay_report(f, shell, 2.0, 1.0)  # q must exceed the dimension
    with pytest.raises(DomainError):
        forces.decay_report(f, shell, 4.0, 0.1)  # beta too small
