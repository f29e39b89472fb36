import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ksweep.mesh import (MeshError, PhaseField, SpatialField, build_mesh,
                         edge_limits, evaluate, jump_and_average, project,
                         project_spatial)

# dense reference rule for quadrature oracles (20-pt Gauss per direction)
_GX, _GW = np.polynomial.legendre.leggauss(20)
_GX *= 0.5
_GW *= 0.5


def dense_cell_moments(fn, mesh, i, j):
    x = mesh.x_centers[i] + mesh.dx * _GX
    v = mesh.v_centers[j] + mesh.dv * _GX
    vals = fn(x[:, None], v[None, :])
    w = _GW[:, None] * _GW[None, :]
    c0 = np.sum(vals * w)
    c1 = 12.0 * np.sum(vals * _GX[:, None] * w)
    c2 = 12.0 * np.sum(vals * _GX[None, :] * w)
    return c0, c1, c2


def test_diode_mesh_counts():
    m = build_mesh(0.0, 0.6, -2.0, 2.0, 200, 200)
    assert m.n_cells == 40_000
    assert m.n_unknowns == 120_000
    assert m.dx == pytest.approx(0.003)
    assert m.dv == pytest.approx(0.02)
    assert m.nv_neg == 100


def test_smallest_legal_mesh():
    m = build_mesh(0.0, 1.0, -1.0, 1.0, 1, 2)
    assert m.n_cells == 2
    assert m.n_unknowns == 6


def test_level_convention_mesh():
    m = build_mesh(-np.pi, np.pi, -np.pi, np.pi, 64, 64)
    assert m.dx == pytest.approx(2 * np.pi / 64)
    assert m.dv == pytest.approx(2 * np.pi / 64)


def test_rejects_v0_inside_cell():
    with pytest.raises(MeshError):
        build_mesh(0.0, 1.0, -1.0, 2.0, 4, 4)  # dv = 0.75, v=0 not on interface


def test_rejects_bad_extents():
    with pytest.raises(MeshError):
        build_mesh(1.0, 0.0, -1.0, 1.0, 4, 4)
    with pytest.raises(MeshError):
        build_mesh(0.0, 1.0, -1.0, 1.0, 0, 4)


def test_spatial_unknown_count():
    m = build_mesh(0.0, 1.0, -1.0, 1.0, 7, 4)
    assert SpatialField.zeros(m).coeffs.size == 2 * 7


def test_project_zero():
    m = build_mesh(0.0, 1.0, -1.0, 1.0, 4, 4)
    f = project(lambda x, v: np.zeros_like(x * v), m)
    assert np.all(f.coeffs == 0.0)


def test_project_exact_for_in_space_data():
    m = build_mesh(0.0, 1.0, -1.0, 1.0, 1, 2)
    f = project(lambda x, v: 3.0 + x + 0.0 * v, m)
    # cell mean of 3 + x on [0,1] is 3.5; slope coefficient is dx * 1 = 1
    assert f.coeffs[0, 0, 0] == pytest.approx(3.5, abs=1e-14)
    assert f.coeffs[0, 0, 1] == pytest.approx(1.0, abs=1e-14)
    assert f.coeffs[0, 0, 2] == pytest.approx(0.0, abs=1e-14)
    # projection residual vanishes: re-projecting the field changes nothing
    g = project(lambda x, v: np.broadcast_to(3.0 + x, np.broadcast_shapes(x.shape, v.shape)), m)
    assert np.allclose(f.coeffs, g.coeffs, atol=1e-14)


def test_project_gaussian_matches_dense_quadrature():
    # cells must resolve the Gaussian for the contract rule (4-pt Gauss on
    # non-polynomial data) to integrate it to full precision
    m = build_mesh(0.0, 1.0, -1.0, 1.0, 3, 64)
    fn = lambda x, v: np.exp(-4.0 * v ** 2) + 0.0 * x
    f = project(fn, m)
    for (i, j) in [(0, 32), (1, 36), (2, 44)]:
        ref = dense_cell_moments(fn, m, i, j)
        assert f.coeffs[i, j] == pytest.approx(ref, rel=1e-12, abs=1e-13)


def test_projection_idempotence():
    m = build_mesh(0.0, 2.0, -1.0, 1.0, 5, 6)
    f = project(lambda x, v: np.sin(x) * np.exp(-v ** 2), m)
    g = project(lambda x, v: np.vectorize(lambda a, b: evaluate(f, a, b))(x, v), m)
    assert np.allclose(g.coeffs, f.coeffs, rtol=1e-13, atol=1e-13)


def test_l2_norm_matches_dense_quadrature():
    m = build_mesh(0.0, 1.0, -1.0, 1.0, 4, 4)
    f = project(lambda x, v: np.cos(3 * x) * np.exp(-v ** 2), m)
    total = 0.0
    for i in range(m.nx):
        for j in range(m.nv):
            c = f.coeffs[i, j]
            x = _GX[:, None]
            v = _GX[None, :]
            vals = c[0] + c[1] * x + c[2] * v
            total += m.dx * m.dv * np.sum(vals ** 2 * _GW[:, None] * _GW[None, :])
    assert f.l2_norm() == pytest.approx(np.sqrt(total), rel=1e-12)


def test_evaluate_constant_everywhere():
    m = build_mesh(0.0, 1.0, -1.0, 1.0, 4, 4)
    f = PhaseField(m, np.zeros((4, 4, 3)))
    f.coeffs[:, :, 0] = 7.5
    assert evaluate(f, 0.3, 0.2) == pytest.approx(7.5)
    gm, gp = edge_limits(f, "x", 2, 0.1)
    assert gm == pytest.approx(7.5) and gp == pytest.approx(7.5)


def test_global_linear_is_continuous():
    m = build_mesh(0.0, 1.0, -1.0, 1.0, 4, 4)
    f = project(lambda x, v: 2.0 * x + 0.0 * v, m)
    jump, avg = jump_and_average(f, "x", 2, 0.25)
    x_iface = m.x_nodes[2]
    assert jump == pytest.approx(0.0, abs=1e-14)
    assert avg == pytest.approx(2.0 * x_iface, abs=1e-14)


def test_discontinuous_jump_average():
    m = build_mesh(0.0, 1.0, -1.0, 1.0, 2, 2)
    f = PhaseField(m, np.zeros((2, 2, 3)))
    f.coeffs[0, :, 0] = 1.0
    f.coeffs[1, :, 0] = 2.0
    jump, avg = jump_and_average(f, "x", 1, -0.3)
    assert jump == pytest.approx(1.0)
    assert avg == pytest.approx(1.5)


def test_evaluate_rejects_outside_domain():
    m = build_mesh(0.0, 1.0, -1.0, 1.0, 2, 2)
    with pytest.raises(ValueError):
        evaluate(PhaseField.zeros(m), 1.5, 0.0)


def test_project_rejects_non_finite():
    m = build_mesh(0.0, 1.0, -1.0, 1.0, 2, 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        with pytest.raises(FloatingPointError):
            project(lambda x, v: x / (v - v), m)


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_projection_reproduces_local_space(a, b, c):
    # any function already in the local P1 space projects to itself
    m = build_mesh(0.0, 1.0, -1.0, 1.0, 2, 2)
    fn = lambda x, v: a + b * (x - 0.25) + c * (v + 0.5) + 0.0 * x * v
    f = project(fn, m)
    x, v = 0.1, -0.4
    assert evaluate(f, x, v) == pytest.approx(fn(x, v), rel=1e-12, abs=1e-12)


def test_spatial_projection_and_values():
    m = build_mesh(0.0, 1.0, -1.0, 1.0, 4, 2)
    s = project_spatial(lambda x: x ** 2, m)
    xs = np.array([0.1, 0.6, 0.9])
    # P1 projection of x^2 agrees with x^2 up to O(dx^2)
    assert np.allclose(s.values_at(xs), xs ** 2, atol=m.dx ** 2)
