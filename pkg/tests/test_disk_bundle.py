import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qslab import disk_bundle as db
from qslab.expr import random_hamiltonian, random_polynomial
from qslab.sphere_field import SampledPath

coords = st.floats(-1.2, 1.2)
radii = st.floats(0.0, 0.95)
angles = st.floats(0.0, 2 * math.pi)


@given(coords, coords, radii, angles)
@settings(max_examples=50, deadline=None)
def test_omega_routes_agree(u, v, r, phi):
    p, q = r * math.cos(phi), r * math.sin(phi)
    m1 = db.omega_matrix(u, v, p, q, route=1)
    assert np.allclose(m1, db.omega_matrix(u, v, p, q, route=2), atol=1e-12)
    assert np.allclose(m1, db.omega_closed_form(u, v, p, q), atol=1e-12)
    assert np.allclose(m1, -m1.T)
    # omega^2 is positive away from r = 1
    assert db.pfaffian(m1) > 0


@given(coords, coords)
def test_curvature(u, v):
    assert abs(db.curvature_residual(np.array(u), np.array(v))) < 1e-7


def test_fiber_area_is_one():
    assert abs(db.fiber_area() - 1.0) < 1e-12


def test_total_volume_is_one():
    one = db.lift("1", db.RadialProfile.from_expression("1"))
    assert abs(db.bundle_integral(one, db.BundleGrid(48, 48, 8, 8)) - 1.0) < 1e-5


@given(st.integers(0, 2**31))
@settings(max_examples=25, deadline=None)
def test_chart_change_roundtrip(seed):
    rng = np.random.default_rng(seed)
    pts = db.random_bundle_points(rng, 8, r_max=0.9)
    other = pts.to_chart(1 - pts.chart)
    assert np.allclose(other.base_points(), pts.base_points())
    assert np.allclose(other.r, pts.r)
    back = other.to_chart(pts.chart)
    assert np.allclose(back.coords, pts.coords)
    f = db.lift(random_polynomial(rng), db.theta_profile(0.1))
    assert np.allclose(f(other), f(pts))


def test_chart_pole_rejected():
    p = db.BundlePoints.from_polar(db.NORTH, 0.0, 0.0, 0.3, 0.0)
    with pytest.raises(db.BundleError):
        p.to_chart(db.SOUTH)


def test_chart_maps_inverse():
    pts = np.random.default_rng(0).normal(size=(20, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    for chart in (db.NORTH, db.SOUTH):
        u, v = db.sphere_to_chart(chart, pts)
        assert np.allclose(db.chart_to_sphere(chart, u, v), pts)


@pytest.mark.parametrize("eps", [0.02, 0.1, 0.3])
def test_theta_profile_shape(eps):
    th = db.theta_profile(eps)
    r = np.linspace(0, 1, 2001)
    inner = r <= 1 - eps
    assert np.array_equal(th(r)[inner], 1 - r[inner] ** 2)
    assert np.all(th(r)[r >= 1 - eps / 2] == 0)
    assert np.all(th(r) >= 0) and np.all(np.diff(th(r)) <= 1e-15)
    # C^1 across the knots: the derivative matches a centred difference
    for k in th.knots:
        h = 1e-6
        assert abs((th(k + h) - th(k - h)) / (2 * h) - th.d(k)) < 1e-4


def test_theta_profile_rejects_bad_eps():
    for eps in (0.0, 0.5, -0.1):
        with pytest.raises(ValueError):
            db.theta_profile(eps)


def test_lift_gradient_matches_differences():
    rng = np.random.default_rng(2)
    pts = db.random_bundle_points(rng, 30, r_max=0.85)
    f = db.lift(random_polynomial(rng), db.theta_profile(0.1))
    fd = db.fd_gradient(f, pts, [1e-3] * 4)
    assert np.max(np.abs(fd - f.gradient(pts))) < 1e-7


def test_bracket_antisymmetric():
    rng = np.random.default_rng(3)
    pts = db.random_bundle_points(rng, 20, r_max=0.8)
    f, g = (db.lift(random_polynomial(rng), db.theta_profile(0.1)) for _ in range(2))
    steps = db.BundleGrid().steps
    assert np.allclose(db.bracket_bundle(f, g, pts, steps), -db.bracket_bundle(g, f, pts, steps))


def test_bracket_identity_coordinates():
    pts = db.random_bundle_points(np.random.default_rng(0), 100, r_max=0.85)
    th = db.theta_profile(0.1)
    coarse = db.bracket_identity_residual("x", "y", th, pts, db.BundleGrid(32, 32, 16, 16))
    fine = db.bracket_identity_residual("x", "y", th, pts, db.BundleGrid(64, 64, 32, 32))
    assert fine.max_rel < 1e-4
    assert fine.max_rel < 0.6 * coarse.max_rel


def test_bracket_identity_converges_theta_01():
    # the +-2h stencil straddles the eps/2-wide transition at 64; refinement must still cut the error
    rng = np.random.default_rng(0)
    th = db.theta_profile(0.1)
    H, K = random_polynomial(rng), random_polynomial(rng)
    pts = db.random_bundle_points(rng, 100, r_max=0.9)
    g = db.BundleGrid(64, 64, 32, 32)
    coarse = db.bracket_identity_residual(H, K, th, pts, g).max_rel
    fine = db.bracket_identity_residual(H, K, th, pts, g.refined()).max_rel
    assert fine <= 0.6 * coarse
    assert fine < 2e-2


def test_bracket_identity_rejects_boundary():
    pts = db.BundlePoints.from_base(np.array([[0, 0, 1.0]]), 0.97, 0.0)
    with pytest.raises(db.BundleError):
        db.bracket_identity_residual("x", "y", db.theta_profile(0.1), pts)
    edge = db.BundlePoints.from_base(np.array([[0, 0, 1.0]]), 1.0, 0.0)
    with pytest.raises(db.BundleError):
        db.bracket_bundle(db.lift("x", db.one_minus_r2()), db.lift("y", db.one_minus_r2()), edge)


def test_sgrad_pushforward_on_zero_section():
    base = np.array([[0.6, 0.0, 0.8], [0.36, 0.48, -0.8]])
    pts = db.BundlePoints.from_base(base, 0.0, 0.3)
    rep = db.sgrad_pushforward_residual("z", db.theta_profile(0.1), pts, db.BundleGrid(64, 64, 32, 32).refined(4))
    assert rep.max_abs < 1e-6


def test_radial_factors():
    q = db.one_minus_r2()
    assert abs(db.radial_factor_literal(q) - 1 / 3) < 1e-12
    assert abs(db.radial_factor(q) - 2 / 3) < 1e-12
    assert abs(db.fiber_density_factor(q) - 2 / 3) < 1e-12
    assert abs(db.fiber_density_factor(db.RadialProfile.from_expression("1")) - 1.0) < 1e-12


@pytest.mark.parametrize("eps", [0.05, 0.1, 0.3])
def test_radial_factor_is_fiber_mass(eps):
    # integration by parts against 1 - (1 - r^2)^2, whose derivative is the fiber density 4 r (1 - r^2)
    th = db.theta_profile(eps)
    assert abs(db.radial_factor(th) - db.fiber_density_factor(th)) < 1e-10
    # the literal form differs by the boundary term theta(0) = 1
    assert abs(db.radial_factor(th) + db.radial_factor_literal(th) - 1.0) < 1e-10


def test_fiber_identity_fiber_integrated():
    rep = db.fiber_integral_residual("1 + x - y*z", db.theta_profile(0.1), db.BundleGrid(48, 48, 16, 16))
    assert rep.residual < 1e-2
    assert abs(rep.base_integral - 1.0) < 1e-12


def test_base_integral():
    assert abs(db.base_integral("z**2") - 1 / 3) < 1e-12
    assert abs(db.base_integral("x*y + 2") - 2.0) < 1e-12


def test_hamiltonian_vector_is_symplectic_dual():
    rng = np.random.default_rng(5)
    pts = db.random_bundle_points(rng, 10, r_max=0.8)
    grad = rng.normal(size=(10, 4))
    X = db.hamiltonian_vector(pts, grad)
    om = db.omega_matrix(pts.u, pts.v, pts.coords[:, 2], pts.coords[:, 3])
    assert np.allclose(np.einsum("nij,nj->ni", om, X), grad)


def test_rotation_flow_commutes(mesh3):
    F = SampledPath.from_expression(mesh3, "z", m=10)
    seeds = db.random_bundle_points(np.random.default_rng(1), 6, r_max=0.3, r_min=0.3)
    rep = db.flow_commutation_residual(F, db.theta_profile(0.1), seeds, 1e-3)
    assert rep.max_distance < 1e-4
    assert rep.max_r_drift < 1e-6


def test_random_flow_commutes_and_refines(mesh3):
    rng = np.random.default_rng(2)
    F = SampledPath.from_expression(mesh3, random_hamiltonian(rng), m=10)
    seeds = db.random_bundle_points(rng, 5, r_max=0.9)
    a = db.flow_commutation_residual(F, db.theta_profile(0.1), seeds, 1e-2)
    b = db.flow_commutation_residual(F, db.theta_profile(0.1), seeds, 5e-3)
    assert a.max_distance < 5e-3 and b.max_distance < a.max_distance


def test_commutation_seed_check(mesh2):
    F = SampledPath.from_expression(mesh2, "z", m=10)
    seeds = db.BundlePoints.from_base(np.array([[0, 0, 1.0]]), 0.95, 0.0)
    with pytest.raises(db.BundleError):
        db.flow_commutation_residual(F, db.theta_profile(0.1), seeds, 1e-2)


def test_failure_term_vanishes_inside(mesh3):
    rng = np.random.default_rng(4)
    F, G = (SampledPath.from_expression(mesh3, random_hamiltonian(rng), m=10) for _ in range(2))
    seeds = db.random_bundle_points(rng, 4, r_max=0.9)
    assert db.failure_term(F, G, db.theta_profile(0.1), seeds, 1e-2, times=[0.5, 1.0]) < 1e-3
