import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbm_forge.errors import ChartDegeneracyError, NearConePointError, SlidingDomainError
from fbm_forge.geometry import (
    E_Y,
    E_Z,
    SurfaceChart,
    aux_conformal_factor,
    aux_exp,
    aux_exp_plane_normal,
    boundary_angle,
    fundamental_forms,
    graph_in_aux,
    reflection_matrix,
    rotation_about_axis,
    slide_decompose,
    tilted_plane_normal,
)

TAU = 0.025563


def catenoid(T, V):
    return np.stack([1 - TAU * np.cosh(T) * np.cos(V), TAU * np.cosh(T) * np.sin(V), TAU * T], -1)


def sphere(T, P):
    return np.stack([np.cos(T) * np.cos(P), np.cos(T) * np.sin(P), np.sin(T)], -1)


def catenoid_chart():
    return SurfaceChart("cat", np.linspace(0, 3.2, 33), np.linspace(0, np.pi / 2, 17), catenoid, {}, orientation=-1)


def sphere_chart():
    return SurfaceChart("sph", np.linspace(-1, 1, 21), np.linspace(0, 2, 21), sphere, {}, orientation=-1)


def test_flat_plane_has_no_curvature():
    chart = SurfaceChart("plane", np.linspace(-1, 1, 9), np.linspace(0, 2, 9), lambda a, b: np.stack([a, b, 0 * a], -1), {})
    g = fundamental_forms(chart)
    assert np.max(np.abs(g.mean_curvature)) <= 1e-12
    assert np.max(np.abs(g.second_form)) <= 1e-12
    np.testing.assert_allclose(g.normal, np.broadcast_to(E_Z, g.normal.shape), atol=1e-15)


def test_catenoid_is_minimal():
    g = fundamental_forms(catenoid_chart(), h=1e-2)
    assert np.max(np.abs(g.mean_curvature)) <= 1e-6


def test_unit_sphere_patch():
    g = fundamental_forms(sphere_chart(), h=1e-2)
    # outward normal and A_ab = -<X_ab, nu> give H = 2 and A = g
    assert np.max(np.abs(g.mean_curvature - 2.0)) <= 1e-6
    assert np.max(np.abs(g.second_form - g.metric)) <= 1e-6


@pytest.mark.parametrize("chart,exact", [(catenoid_chart, 0.0), (sphere_chart, 2.0)])
def test_fourth_order_convergence(chart, exact):
    err = [np.max(np.abs(fundamental_forms(chart(), h=h).mean_curvature - exact)) for h in (4e-2, 2e-2)]
    assert err[0] / err[1] >= 12.0


def test_one_sided_stencils_at_edges():
    chart = catenoid_chart()
    chart.extends = False
    g = fundamental_forms(chart, h=1e-3)
    assert np.max(np.abs(g.mean_curvature)) <= 1e-5


def test_degenerate_chart_is_reported():
    chart = SurfaceChart("line", np.linspace(0, 1, 5), np.linspace(0, 1, 5), lambda a, b: np.stack([a + b, a + b, 0 * a], -1), {})
    with pytest.raises(ChartDegeneracyError):
        fundamental_forms(chart)


def test_equatorial_disk_meets_sphere_orthogonally():
    disk = lambda r, t: np.stack([r * np.cos(t), r * np.sin(t), 0 * r], -1)
    chart = SurfaceChart("eq", np.linspace(0.5, 1.0, 11), np.linspace(0, 1, 11), disk, {"u1_hi": "spherical"})
    g = fundamental_forms(chart)
    assert np.max(np.abs(boundary_angle(g, chart, "u1_hi"))) <= 1e-15
    with pytest.raises(ValueError):
        boundary_angle(g, chart, "u1_lo")


def test_rotations_and_reflections():
    for omega in (0.1, math.pi / 8, 0.3):
        RP = reflection_matrix(E_Z)
        RPp = reflection_matrix(tilted_plane_normal(omega))
        np.testing.assert_allclose(RPp @ RP, rotation_about_axis(math.pi + 2 * omega), atol=1e-14)
        for R in (RP, RPp):
            np.testing.assert_allclose(R @ R, np.eye(3), atol=1e-15)
    # rotation axis is the y-axis
    np.testing.assert_allclose(rotation_about_axis(0.7) @ E_Y, E_Y, atol=1e-15)


def test_conformal_factor_regions():
    om, om1 = aux_conformal_factor(np.array([0.1, 0.2, 0.7, 0.9]))
    np.testing.assert_allclose(om[:2], 1.0, atol=1e-15)
    np.testing.assert_allclose(om1[:2], 0.0, atol=1e-15)
    # K/d on the cone shell
    assert om[2] * 0.7 == pytest.approx(om[3] * 0.9, rel=1e-12)
    np.testing.assert_allclose(om1[2:], -om[2:] / np.array([0.7, 0.9]), rtol=1e-12)


def test_aux_exp_examples():
    base = np.array([[0.4, 0.1, 0.2]])
    np.testing.assert_array_equal(aux_exp(base, E_Z, 0.0), base)
    flat = np.array([[0.1, 0.05, -0.1]])
    v = np.array([0.3, -0.2, 0.1])
    np.testing.assert_allclose(aux_exp(flat, v, 0.2), flat + 0.2 * v, atol=1e-16)
    north = aux_exp(np.array([[1.0, 0.0, 0.0]]), E_Z, np.pi / 2, method="rk4", step=1e-4)
    np.testing.assert_allclose(north, [[0.0, 0.0, 1.0]], atol=1e-9)


def test_aux_exp_rk4_matches_closed_forms():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 3))
    x *= (rng.uniform(0.7, 1.0, 200) / np.linalg.norm(x, axis=1))[:, None]
    v = rng.normal(size=(200, 3)) * 0.05
    assert np.max(np.abs(aux_exp(x, v) - aux_exp(x, v, method="rk4"))) <= 1e-9
    p = np.array([[1.0, 0, 0], [0.8, 0.3, 0], [0.0, -0.75, 0.0]])
    rk4 = aux_exp(p, E_Z, 0.3, method="rk4")
    assert np.max(np.abs(rk4 - aux_exp_plane_normal(p, 0.3))) <= 1e-9


def test_aux_exp_step_convergence_in_transition_shell():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(100, 3))
    x *= (rng.uniform(0.35, 0.65, 100) / np.linalg.norm(x, axis=1))[:, None]
    v = rng.normal(size=(100, 3)) * 0.05
    assert np.max(np.abs(aux_exp(x, v, step=2e-3) - aux_exp(x, v, step=5e-4))) <= 1e-10


def test_aux_exp_near_cone_point():
    with pytest.raises(NearConePointError):
        aux_exp(np.array([[0.6, 0.0, 0.0]]), np.array([-1.0, 0.0, 0.0]), 3.0, method="rk4")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_totally_geodesic_boundary_pieces(seed):
    rng = np.random.default_rng(seed)
    omega = 0.1
    # sphere: start on it, tangent to it
    x = rng.normal(size=3)
    x /= np.linalg.norm(x)
    v = rng.normal(size=3)
    v -= (v @ x) * x
    v /= np.linalg.norm(v)
    end = aux_exp(x[None], v, 1.0, method="rk4")[0]
    assert abs(np.linalg.norm(end) - 1.0) <= 1e-9
    # the planes P and P' through the axis
    for normal in (E_Z, tilted_plane_normal(omega)):
        x = rng.normal(size=3)
        x -= (x @ normal) * normal
        x *= rng.uniform(0.3, 1.0) / np.linalg.norm(x)
        v = rng.normal(size=3)
        v -= (v @ normal) * normal
        v *= 0.5 * np.linalg.norm(x) / np.linalg.norm(v)
        end = aux_exp(x[None], v, 1.0, method="rk4")[0]
        assert abs(end @ normal) <= 1e-9


def test_graph_in_aux_examples():
    base = SurfaceChart(
        "eq", np.linspace(0.7, 0.95, 6), np.linspace(0, 1, 5), lambda r, t: np.stack([r * np.cos(t), r * np.sin(t), 0 * r], -1), {}
    )
    up = lambda a, b: np.broadcast_to(E_Z, a.shape + (3,))
    same = graph_in_aux(base, lambda a, b: 0 * a, up)
    np.testing.assert_allclose(same.nodes(), base.nodes(), atol=1e-15)
    c = 0.05
    lifted = graph_in_aux(base, lambda a, b: c + 0 * a, up).nodes()
    X = base.nodes()
    d0 = np.linalg.norm(X, axis=-1)[..., None]
    np.testing.assert_allclose(lifted, np.cos(c / d0) * X + d0 * np.sin(c / d0) * E_Z, atol=1e-14)
    flat = SurfaceChart("core", np.linspace(0, 0.1, 4), np.linspace(0, 0.1, 4), lambda a, b: np.stack([a, b, 0 * a], -1), {})
    np.testing.assert_allclose(graph_in_aux(flat, lambda a, b: 0.01 + 0 * a, up).nodes(), flat.nodes() + 0.01 * E_Z, atol=1e-16)


def test_slide_examples():
    zero = slide_decompose([[0.8, 0.1]], [0.0])
    assert np.all(zero.shift == 0) and np.all(zero.height == 0)
    one = slide_decompose([[1.0, 0.0]], [0.1])
    assert np.linalg.norm(one.shift) == pytest.approx(math.sqrt(1.01) - 1, abs=1e-15)
    assert np.linalg.norm(one.shift) == pytest.approx(0.0049876, abs=1e-7)
    with pytest.raises(SlidingDomainError):
        slide_decompose([[0.5, 0.0]], [0.01])
    with pytest.raises(SlidingDomainError):
        slide_decompose([[0.9, 0.0]], [0.3])


def test_slide_roundtrip():
    rng = np.random.default_rng(2)
    q = rng.uniform(-1, 1, (100, 2))
    q = q / np.linalg.norm(q, axis=1)[:, None] * rng.uniform(0.7, 1, 100)[:, None]
    u = rng.uniform(-0.1, 0.1, 100)
    sd = slide_decompose(q, u)
    target = np.c_[q, u]
    assert np.max(np.abs(aux_exp_plane_normal(sd.slid, sd.height) - target)) <= 1e-10
    assert np.max(np.abs(aux_exp(sd.slid, E_Z, sd.height, method="rk4") - target)) <= 1e-10


@pytest.mark.parametrize("c", [0.01, 0.05, 0.1])
def test_slide_shift_is_quadratic(c):
    s = np.linspace(0.7, 1.0, 50)
    q = np.c_[s, np.zeros(50)]
    u = c * np.sin(np.pi * (s - 0.7) / 0.3) ** 2
    shift = slide_decompose(q, u).shift
    assert np.max(np.linalg.norm(shift, axis=1)) <= 2 * np.max(np.abs(u)) ** 2
