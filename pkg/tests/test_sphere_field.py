import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qslab.expr import Expression, random_hamiltonian, random_polynomial
from qslab.sphere_field import (Cap, DisplacementError, FlowError, MeshError, SampledPath, ScalarField,
                                SphereMesh, SupportError, calabi, compose_paths, displacement_margin,
                                displacing_rotation, exact_bracket, hamiltonian_flow, integrate, inverse_path,
                                make_mesh, poisson_bracket, spherical_triangle_areas, vertex_gradients)


@pytest.mark.parametrize("level", range(0, 5))
def test_mesh_topology_and_area(level):
    m = make_mesh(level)
    assert m.n_vertices == 10 * 4 ** level + 2
    assert m.euler_characteristic == 2
    assert math.isclose(m.vertex_weights.sum(), 1.0, abs_tol=1e-12)
    assert math.isclose(m.triangle_areas.sum(), 4 * math.pi, rel_tol=1e-12)
    assert np.all(m.vertex_weights > 0)


def test_mesh_orientation_outward(mesh3):
    v, t = mesh3.vertices, mesh3.triangles
    n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    assert np.all(np.einsum("ij,ij->i", n, v[t].mean(axis=1)) > 0)


def test_mesh_validation():
    with pytest.raises(MeshError):
        SphereMesh(np.array([[2.0, 0, 0]]), np.zeros((0, 3), dtype=int), np.ones(1))
    with pytest.raises(MeshError):
        SphereMesh(np.eye(3), np.array([[0, 1, 5]]), np.ones(3))


def test_off_roundtrip(mesh2, tmp_path):
    p = tmp_path / "m.off"
    mesh2.write_off(p)
    back = SphereMesh.read_off(p)
    assert np.allclose(back.vertices, mesh2.vertices)
    assert np.array_equal(back.triangles, mesh2.triangles)


def test_csv_roundtrip(mesh2):
    H = ScalarField.from_expression(mesh2, "x*y + z")
    back = ScalarField.from_csv(mesh2, H.to_csv())
    assert np.array_equal(back.values, H.values)


def test_field_validation(mesh2):
    with pytest.raises(ValueError):
        ScalarField(mesh2, np.zeros(3))
    with pytest.raises(ValueError):
        ScalarField(mesh2, np.full(mesh2.n_vertices, np.nan))


@pytest.mark.parametrize("expr,exact", [("1", 1.0), ("z**2", 1 / 3), ("x**2 + y", 1 / 3), ("x*y*z", 0.0)])
def test_integral_is_mean(mesh4, expr, exact):
    assert abs(integrate(ScalarField.from_expression(mesh4, expr)) - exact) < 2e-3


def test_gradient_converges(mesh3, mesh4):
    e = Expression("x*y + z**3")
    errs = []
    for m in (mesh3, mesh4):
        g = vertex_gradients(ScalarField(m, e(m.vertices)))
        errs.append(np.max(np.abs(g - e.sphere_grad(m.vertices))))
    assert errs[1] < 0.5 * errs[0]


def test_bracket_of_coordinates(mesh4):
    # {x, y} = -4 pi z in the area-one normalization
    v = mesh4.vertices
    b = exact_bracket(Expression("x"), Expression("y"), v)
    assert np.allclose(b, -4 * math.pi * v[:, 2])
    d = poisson_bracket(ScalarField(mesh4, v[:, 0]), ScalarField(mesh4, v[:, 1]))
    assert np.max(np.abs(d.values - b)) < 0.05


@given(st.integers(0, 10_000))
@settings(max_examples=10, deadline=None)
def test_bracket_antisymmetric_and_commuting(seed):
    m = make_mesh(2)
    rng = np.random.default_rng(seed)
    H, K = random_polynomial(rng), random_polynomial(rng)
    assert np.allclose(exact_bracket(H, K, m.vertices), -exact_bracket(K, H, m.vertices))
    g = H.compose("s**2 + sin(s)")
    assert np.max(np.abs(exact_bracket(H, g, m.vertices))) < 1e-9


def test_rotation_flow_exact(mesh3):
    # sgrad z = 4 pi (n x e_z): a rotation by -4 pi t about the z axis
    F = SampledPath.from_expression(mesh3, "z", m=10)
    pts = mesh3.vertices[::7]
    flow = hamiltonian_flow(F, pts, 1e-3)
    a = -4 * math.pi * 0.1
    R = np.array([[math.cos(a), -math.sin(a), 0], [math.sin(a), math.cos(a), 0], [0, 0, 1]])
    assert np.max(np.abs(flow.positions[1] - pts @ R.T)) < 1e-9


def test_flow_preserves_hamiltonian(mesh3):
    e = random_hamiltonian(np.random.default_rng(0))
    F = SampledPath.from_expression(mesh3, e, m=10)
    fin = hamiltonian_flow(F, mesh3.vertices, 5e-3).final
    assert np.max(np.abs(e(fin) - e(mesh3.vertices))) < 1e-6
    assert np.allclose(np.linalg.norm(fin, axis=1), 1.0)


def test_flow_preserves_area(mesh3, mesh4):
    # image triangles are not geodesic, so the per-triangle area defect is O(h) and must halve
    e = random_hamiltonian(np.random.default_rng(0))
    errs = []
    for m in (mesh3, mesh4):
        img = hamiltonian_flow(SampledPath.from_expression(m, e, m=10), m.vertices, 5e-3).positions[1]
        t = m.triangles
        a = spherical_triangle_areas(img[t[:, 0]], img[t[:, 1]], img[t[:, 2]])
        errs.append(np.max(np.abs(a / m.triangle_areas - 1)))
    assert errs[1] < 0.6 * errs[0]


def test_inverse_and_compose(mesh3):
    rng = np.random.default_rng(1)
    F = SampledPath.from_expression(mesh3, random_hamiltonian(rng), m=10)
    G = SampledPath.from_expression(mesh3, random_hamiltonian(rng), m=10)
    p = mesh3.vertices[::11]
    ones = np.ones(len(p))
    back = F.inverse_flow_to(F.flow_to(p, ones, 1e-3), ones, 1e-3)
    assert np.max(np.abs(back - p)) < 1e-8
    Fi = inverse_path(F, 1e-3)
    assert np.max(np.abs(Fi.flow_to(F.flow_to(p, ones, 1e-3), ones, 1e-3) - p)) < 1e-8
    FG = compose_paths(F, G, 1e-2)
    assert np.allclose(FG.flow_to(p, ones, 1e-2), F.flow_to(G.flow_to(p, ones, 1e-2), ones, 1e-2))


def test_flow_step_validation(mesh2):
    F = SampledPath.from_expression(mesh2, "z", m=10)
    with pytest.raises(FlowError):
        hamiltonian_flow(F, mesh2.vertices, 3e-3)
    with pytest.raises(FlowError):
        hamiltonian_flow(F, mesh2.vertices, 0.0)
    with pytest.raises(FlowError):
        SampledPath(mesh2, F.values).evaluate(mesh2.vertices[:1], 1.5)


def test_calabi_matches_mean(mesh3):
    cap = Cap((0, 0, 1), 0.3)
    mask = cap.vertex_mask(mesh3)
    vals = np.where(mask, 1.0, 0.0)
    F = SampledPath(mesh3, np.tile(vals, (11, 1)))
    assert math.isclose(calabi(F, mask), integrate(ScalarField(mesh3, vals)))
    lam = SampledPath.scaled(ScalarField(mesh3, vals), lambda t: 2 * t)
    assert math.isclose(calabi(lam, mask), calabi(F, mask), rel_tol=1e-12)
    with pytest.raises(SupportError):
        calabi(F, ~mask)


def test_cap_geometry():
    cap = Cap((0, 0, 2), 0.25)
    assert math.isclose(cap.radius, math.pi / 3)
    assert cap.contains(np.array([[0, 0, 1.0]]))[0]
    assert not cap.contains(np.array([[0, 0, -1.0]]))[0]
    assert np.allclose(cap.angle(cap.boundary_samples(16)), cap.radius)
    with pytest.raises(ValueError):
        Cap((1, 0, 0), 1.5)


@pytest.mark.parametrize("area", [0.1, 0.3, 0.45])
def test_displacing_rotation(mesh3, area):
    cap = Cap((0.3, -0.2, 0.9), area)
    F = displacing_rotation(mesh3, cap.center, area)
    assert displacement_margin(F, cap) > 0


def test_large_cap_not_displaceable(mesh2):
    with pytest.raises(DisplacementError):
        displacing_rotation(mesh2, (0, 0, 1), 0.5)
