import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fbm_forge.checks import base_orthogonality, catenoid_mean_curvature, spherical_edge_angle
from fbm_forge.errors import BridgeTooLargeError, CollarError, DialRangeError, SlidingDomainError
from fbm_forge.geometry import fundamental_forms, rotation_about_axis
from fbm_forge.ld import BEND_INNER, BEND_OUTER, LDParams, calibrate_tau, conformal_f
from fbm_forge.linear import ResidualMap
from fbm_forge.minimizer import planar_defect, sphere_defect
from fbm_forge.surface import (
    bend_to_orthogonal,
    bridge_boundary_angle,
    bridge_half_length,
    bridge_lambda,
    bridge_normal,
    bridge_point,
    build_base,
    build_pre_initial,
    catenoid_point,
    construction_params,
    disk_z,
    perturb,
    with_zeta,
)


def test_construction_params_and_zeta():
    p = construction_params(0.1)
    assert p.tau == p.tau_bar and p.alpha == 0.75
    q = with_zeta(p, 0.01)
    assert q.tau == pytest.approx(math.exp(0.1) * p.tau_bar, rel=1e-14)
    with pytest.raises(DialRangeError):
        with_zeta(p, 0.1)


def test_base_surface_regions():
    base = build_base(0.1)
    # identity near p, rotation by omega near the diameter
    near_p = conformal_f(np.array([0.1, 0.3]) * np.exp(0.4j))
    X = base.immersion(near_p)
    np.testing.assert_allclose(X, np.c_[near_p.real, near_p.imag, 0 * near_p.real], atol=1e-15)
    near_diam = conformal_f(np.array([0.99, 0.995]) * np.exp(1.2j))
    X = base.immersion(near_diam)
    q = np.c_[near_diam.real, near_diam.imag, 0 * near_diam.real]
    np.testing.assert_allclose(X, q @ rotation_about_axis(0.1).T, atol=1e-15)
    assert set(np.unique(base.region(np.concatenate([near_p, near_diam])))) == {1, 3}


def test_base_surface_orthogonal_to_sphere():
    assert base_orthogonality(construction_params(0.1)) <= 1e-8


def test_level_sets_of_f_cross_the_arc_orthogonally():
    theta = np.linspace(-1.4, 1.4, 40)
    theta = theta[np.abs(theta) > 0.05]
    z = np.exp(1j * theta)
    h = 1e-6
    radial = (np.abs(conformal_f(z * (1 + h))) - np.abs(conformal_f(z * (1 - h)))) / (2 * h)
    assert np.max(np.abs(radial)) <= 1e-8


def test_base_mean_curvature_localized():
    base = build_base(0.1)
    chart = base.disk_chart(shape=(80, 40))
    g = fundamental_forms(chart, h=1e-4)
    S, Psi = chart.mesh()
    r = np.abs(conformal_f(disk_z(S, Psi)))
    outside = (r <= BEND_INNER - 0.01) | (r >= BEND_OUTER + 0.005)
    assert np.any(outside)
    assert np.max(np.abs(g.mean_curvature[outside])) <= 1e-8
    assert np.max(np.abs(g.mean_curvature)) > 1e-3


def test_bridge_examples():
    assert np.allclose(catenoid_point(0.0, 0.0, 0.03), [0.97, 0.0, 0.0], atol=1e-16)
    assert bridge_half_length(LDParams(0.1, 0.0, 0.025563, 0.025563, alpha=0.3)) == pytest.approx(3.258, abs=1e-3)
    # 1 - (2/pi) arcsin(tau/2) at t = 0
    assert bridge_lambda(0.0, 0.01) == pytest.approx(0.9968169, abs=1e-6)
    with pytest.raises(BridgeTooLargeError):
        bridge_half_length(LDParams(0.1, 0.0, 0.5, 0.5, alpha=1.5))
    with pytest.raises(BridgeTooLargeError):
        bridge_lambda(5.0, 0.1)


@given(st.floats(0.0, 3.0), st.floats(0.005, 0.05))
def test_bridge_spherical_edge(t, tau):
    X = bridge_point(t, np.pi / 2, tau)
    assert abs(np.linalg.norm(X) - 1.0) <= 1e-10
    theta = float(X @ bridge_normal(t, np.pi / 2, tau))
    assert theta == pytest.approx(float(bridge_boundary_angle(t, tau)), abs=1e-12)


def test_bridge_angle_at_waist():
    assert bridge_boundary_angle(0.0, 0.02) == pytest.approx(-0.01, abs=1e-17)


def test_pre_initial_collar_and_overlap(pre_initial01):
    info = pre_initial01.info
    assert info["collar_points"] > 0
    assert info["collar_gap"] <= 1e-8
    assert info["edge_inverse_residual"] <= 1e-8
    assert catenoid_mean_curvature(pre_initial01) <= 1e-6


def test_pre_initial_angle_scale(pre_initial01):
    tau = pre_initial01.params.tau
    ratio = spherical_edge_angle(pre_initial01) / (tau * abs(math.log(tau)))
    assert 0.1 <= ratio <= 10.0


def test_initial_surface_orthogonal(initial01):
    assert spherical_edge_angle(initial01) <= 1e-6


def test_bending_can_be_disabled(pre_initial01):
    unbent = bend_to_orthogonal(pre_initial01, enabled=False)
    assert unbent.info["max_deformation"] == 0.0
    with pytest.raises(CollarError):
        bend_to_orthogonal(pre_initial01, collar_eps=3.0)


def test_boundary_on_mirror_planes_and_sphere(initial01):
    X = {n: cd.X for n, cd in initial01.charts.items()}
    assert planar_defect(initial01, X) <= 1e-8
    assert sphere_defect(initial01, X) <= 1e-8


def test_perturb_zero_is_identity(small_initial01):
    rmap = ResidualMap(small_initial01)
    X = rmap.perturbed(np.zeros(rmap.n))
    for name, cd in small_initial01.charts.items():
        np.testing.assert_allclose(X[name], cd.X, atol=1e-15)


def test_perturbation_keeps_boundary_containment(small_initial01):
    # auxiliary-metric graphs keep boundary points on the sphere and planes
    phi = {}
    for name, cd in small_initial01.charts.items():
        world = cd.world()
        phi[name] = 1e-3 * np.cos(3 * world[..., 0]) * (1 + world[..., 2] ** 2)
    moved = perturb(small_initial01, phi)
    X = {n: cd.X for n, cd in moved.charts.items()}
    assert planar_defect(moved, X) <= 1e-8
    assert sphere_defect(moved, X) <= 1e-8


def test_calibrated_params_reach_builder():
    # the builder refuses a bridge radius exponent that leaves no gluing room
    with pytest.raises((SlidingDomainError, BridgeTooLargeError)):
        build_pre_initial(calibrate_tau(0.1, alpha=0.3), bridge_grid=(16, 8), disk_grid=(16, 8))
