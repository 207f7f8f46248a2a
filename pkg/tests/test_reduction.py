import math

import numpy as np
import pytest

from qslab import reduction as rd
from qslab.disk_bundle import BundleGrid, BundlePoints, lift, one_minus_r2, theta_profile
from qslab.expr import random_polynomial
from qslab.reeb_median import axiom_suite, zeta_med
from qslab.sphere_field import Cap, SampledPath, ScalarField, displacing_rotation, uniform_times


def _field(mesh, seed):
    return ScalarField(mesh, random_polynomial(np.random.default_rng(seed))(mesh.vertices))


PROFILES = [theta_profile(0.1), theta_profile(0.3), one_minus_r2()]


@pytest.mark.parametrize("r", [0.0, 0.5, 0.68])
@pytest.mark.parametrize("profile", PROFILES, ids=lambda p: p.name)
def test_point_oracle_reduces_to_projection(mesh3, profile, r):
    x = np.array([[0.48, -0.6, 0.64]])
    p = BundlePoints.from_base(x, r, 1.3)
    H = _field(mesh3, 7)
    got = rd.reduce_quasi_state(rd.point_oracle(p), profile, H)
    assert abs(got - H.evaluate(x)[0]) < 1e-10


def test_point_oracle_outside_profile_support():
    p = BundlePoints.from_base(np.array([[0.0, 0.0, 1.0]]), 0.9, 0.0)
    with pytest.raises(rd.HypothesisError):
        rd.reduced_quasi_state(rd.point_oracle(p), theta_profile(0.2))


def test_point_oracle_needs_one_point():
    with pytest.raises(ValueError):
        rd.point_oracle(BundlePoints.from_base(np.eye(3), 0.1, 0.0))


def test_slice_reduction_is_median(mesh3):
    red = rd.reduced_quasi_state(rd.median_slice_oracle(mesh3), theta_profile(0.1))
    for seed in range(4):
        H = _field(mesh3, seed)
        assert red(H) == zeta_med(H)


def test_reduced_median_passes_axioms(mesh3):
    red = rd.reduced_quasi_state(rd.median_slice_oracle(mesh3), theta_profile(0.1))
    assert axiom_suite(red, mesh3, n_fields=10, seed=2).passed


def test_reduction_needs_positive_normalizer(mesh2):
    zero = rd.QuasiStateOracle("zero", lambda f: 0.0)
    with pytest.raises(rd.HypothesisError):
        rd.reduced_quasi_state(zero, theta_profile(0.1))
    with pytest.raises(rd.HypothesisError):
        rd.reduce_quasi_state(zero, theta_profile(0.1), _field(mesh2, 0))


def test_mean_oracle_reduction():
    # the omega^2 mean of Theta(H) is the fiber mass of theta times the base mean
    zeta = rd.mean_oracle(BundleGrid(32, 32, 16, 16))
    got = rd.reduce_quasi_state(zeta, one_minus_r2(), "2 + x*y")
    assert abs(got - 2.0) < 1e-4


def test_qs_from_qm(mesh3):
    H = _field(mesh3, 3)
    assert abs(rd.qs_from_qm(rd.median_qm(), H) - zeta_med(H)) < 1e-12
    assert abs(rd.qs_from_qm(rd.zero_qm(), H) - float(H.values @ mesh3.vertex_weights)) < 1e-12


def test_qs_from_qm_requires_stability(mesh2):
    mu = rd.PathQuasiMorphismOracle("bare", lambda F: 0.0)
    with pytest.raises(rd.HypothesisError):
        rd.qs_from_qm(mu, _field(mesh2, 0))


def test_calabi_reference(mesh3):
    # H is a bump on a small cap; the mask is everything outside a disjoint cap holding the reference
    C, D = Cap((0, 0, 1), 0.2), Cap((0, 0, -1), 0.1)
    H = ScalarField(mesh3, np.where(C.vertex_mask(mesh3), 1 - C.angle(mesh3.vertices) / C.radius, 0.0))
    ref = int(np.argmin(mesh3.vertices[:, 2]))
    mu = rd.calabi_qm(~D.vertex_mask(mesh3), reference=ref)
    assert abs(rd.qs_from_qm(mu, H)) < 1e-15
    # Calabi on a region off supp(H), referenced off supp(H), induces the mean
    off = int(np.argmax(mesh3.vertices[:, 0]))
    mean = float(H.values @ mesh3.vertex_weights)
    assert abs(rd.qs_from_qm(rd.calabi_qm(D.vertex_mask(mesh3), reference=off), H) - mean) < 1e-15
    assert zeta_med(H) == 0.0
    assert mu(SampledPath.constant(ScalarField.constant(mesh3, 3.0))) == 0.0
    with pytest.raises(ValueError):
        rd.calabi_qm(D.vertex_mask(mesh3), reference=ref)


@pytest.mark.parametrize("lam", ["1", "2*t", "sin(2*pi*t)", "t**2"])
def test_scale_identity(mesh3, lam):
    cap = Cap((0.0, 0.0, 1.0), 0.2)
    mask = cap.vertex_mask(mesh3)
    Hc = ScalarField(mesh3, np.where(mask, np.cos(0.5 * math.pi * cap.angle(mesh3.vertices) / cap.radius) ** 2, 0))
    rep = rd.scale_identity_check(rd.calabi_qm(mask), lam, Hc, m=20)
    # the trapezoid rule is exact for lambda linear in t, and the lemma is about the exact integral
    tol = 1e-6 if lam != "t**2" else 1e-2
    assert rep.residual <= tol


def test_scale_identity_median(mesh3):
    rep = rd.scale_identity_check(rd.median_qm(), "2*t", _field(mesh3, 5))
    assert rep.residual < 1e-12


def test_annulus_calabi_methods_agree(mesh3):
    times = uniform_times(2)
    F = rd.normalize_path(SampledPath.from_expression(mesh3, "x*y + z*t", m=2))
    Phi = lift(F, theta_profile(0.1))
    a = rd.annulus_calabi_qm((0.2, 0.6), times)(Phi)
    b = rd.annulus_calabi_qm((0.2, 0.6), times, "quadrature", BundleGrid(48, 48, 32, 16))(Phi)
    assert abs(a - b) < 1e-3 * max(1.0, abs(a))
    with pytest.raises(ValueError):
        rd.annulus_calabi_qm((0.2, 0.6), times, "bogus")


def test_slice_median_reduction(mesh3):
    F = rd.normalize_path(SampledPath(mesh3, np.stack([_field(mesh3, s).values for s in range(3)])))
    mu = rd.slice_median_qm(F.times)
    res = rd.reduce_quasi_morphism(mu, 0.1, F, 1.0)
    # slices have zero mean and theta(0) = 1, so only the median term survives on both sides
    assert abs(res.mu_hat - rd.median_qm()(F)) < 1e-12
    assert res.mu_bar == res.mu_hat


def test_reduction_requires_normalized_path(mesh2):
    F = SampledPath.constant(ScalarField.constant(mesh2, 1.0))
    with pytest.raises(rd.HypothesisError):
        rd.reduce_quasi_morphism(rd.zero_qm(), 0.1, F, 1.0)
    with pytest.raises(rd.HypothesisError):
        rd.reduce_quasi_morphism(rd.zero_qm(), 0.1, F, 0.0)


def test_reduced_defect_of_homomorphism(mesh3):
    cap = Cap((0, 0, 1), 0.3)
    bump = np.where(cap.vertex_mask(mesh3), 1 - cap.angle(mesh3.vertices) / cap.radius, 0.0)
    F = rd.normalize_path(SampledPath(mesh3, np.tile(0.05 * bump, (11, 1))))
    G = rd.normalize_path(SampledPath(mesh3, np.tile(-0.03 * bump, (11, 1))))
    out = rd.reduced_defect(rd.zero_qm(), 0.1, [(F, G)])
    assert out["holds"] and out["sampled_defect"] == 0.0 and out["bound"] == 0.0


def test_lift_displacer(mesh3):
    cap = Cap((0.0, 0.0, 1.0), 0.2)
    G = displacing_rotation(mesh3, cap.center, cap.area)
    lifted, cert = rd.lift_displacer(G, cap, 0.2, 0.5)
    assert cert.certified and cert.n_samples > 0
    pts = BundlePoints.from_base(cap.samples(2, 8), 0.4, 0.7)
    assert rd.projection_error(G, lifted, pts) < 1e-6


def test_lift_displacer_hypotheses(mesh3):
    cap = Cap((0.0, 0.0, 1.0), 0.2)
    G = displacing_rotation(mesh3, cap.center, cap.area)
    with pytest.raises(rd.HypothesisError):
        rd.lift_displacer(G, cap, 0.2, 0.85)
    _, cert = rd.lift_displacer(G, None, 0.2, 0.5)
    assert cert.certified and cert.n_samples == 0
    still = SampledPath.from_expression(mesh3, "0", m=10)
    with pytest.raises(rd.CertificationError):
        rd.lift_displacer(still, cap, 0.2, 0.5)
