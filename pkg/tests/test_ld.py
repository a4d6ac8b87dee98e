import cmath
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fbm_forge.errors import DialRangeError, IllConditionedFitError, PoleError, SingularPointError
from fbm_forge.ld import (
    FIT_RADII,
    LDParams,
    calibrate_tau,
    conformal_f,
    green_G,
    green_normal_derivative_arc,
    harmonicity_residual,
    ld_eval,
    mismatch,
    mismatch_envelope,
    obstruction_fields,
    robin_residual,
    tau_bar_of,
)

# tau_bar written out with powers instead of exp/log, as an independent oracle
def tau_bar_oracle(omega):
    lw = abs(math.log(omega))
    return omega / lw * ((4.0 / math.e) * lw) ** (-1.0 / lw)


def half_disk_points(rng, n, exclusion=0.05):
    pts = []
    while len(pts) < n:
        z = complex(rng.uniform(0, 1), rng.uniform(-1, 1))
        if abs(z) <= 1 and abs(z - 1) >= exclusion:
            pts.append(z)
    return np.array(pts)


def test_conformal_f_examples():
    assert conformal_f(1.0) == 0
    assert abs(conformal_f(1j) - (-1j)) <= 1e-15
    with pytest.raises(PoleError):
        conformal_f(-1.0)


@given(st.floats(0, 1), st.floats(-math.pi / 2, math.pi / 2))
def test_conformal_f_is_an_involution(r, angle):
    z = r * cmath.exp(1j * angle)
    assert abs(conformal_f(conformal_f(z)) - z) <= 1e-12
    # the half-disk is mapped into the closed unit disk
    assert abs(conformal_f(z)) <= 1 + 1e-12


def test_green_values():
    assert green_G(0.0)[0] == pytest.approx(1.0, abs=1e-10)
    assert green_G(0.5)[0] == pytest.approx(1 + 0.5 * math.log(1 / 3), abs=1e-10)
    assert green_G(0.5)[0] == pytest.approx(0.450694, abs=1e-6)
    assert green_G(1j)[0] == pytest.approx(1 + math.pi / 2, abs=1e-10)
    with pytest.raises(SingularPointError):
        green_G(1.0)


def test_green_derivatives_match_differences():
    rng = np.random.default_rng(3)
    z = half_disk_points(rng, 200, exclusion=0.1) * 0.95
    _, grad, hess = green_G(z)
    h = 1e-5
    gx = (green_G(z + h)[0] - green_G(z - h)[0]) / (2 * h)
    gy = (green_G(z + 1j * h)[0] - green_G(z - 1j * h)[0]) / (2 * h)
    assert np.max(np.abs(grad[:, 0] - gx)) <= 1e-7
    assert np.max(np.abs(grad[:, 1] - gy)) <= 1e-7
    hxx = (green_G(z + h)[1][:, 0] - green_G(z - h)[1][:, 0]) / (2 * h)
    hxy = (green_G(z + 1j * h)[1][:, 0] - green_G(z - 1j * h)[1][:, 0]) / (2 * h)
    assert np.max(np.abs(hess[:, 0, 0] - hxx)) <= 1e-5
    assert np.max(np.abs(hess[:, 0, 1] - hxy)) <= 1e-5


def test_green_harmonic_and_robin():
    assert harmonicity_residual(1000) <= 1e-6
    assert robin_residual(100) <= 1e-8


def test_green_conjugation_symmetry():
    rng = np.random.default_rng(11)
    z = half_disk_points(rng, 300)
    np.testing.assert_allclose(green_G(z)[0], green_G(np.conj(z))[0], atol=1e-14)


def test_green_expansion_at_p():
    d = np.geomspace(1e-4, 0.3, 40)
    worst = 0.0
    for angle in np.linspace(math.pi / 2 + 0.05, 3 * math.pi / 2 - 0.05, 9):
        z = 1 + d * np.exp(1j * angle)
        rem = np.abs(green_G(z)[0] - np.log(d / 2) - 1)
        worst = max(worst, float(np.max(rem / (d * np.abs(np.log(d))))))
    assert worst <= 10.0


def test_arc_normal_derivative_is_radial():
    theta = np.linspace(-1.2, 1.2, 24)
    z = np.exp(1j * theta)
    h = 1e-6
    fd = (green_G(z * (1 + h))[0] - green_G(z * (1 - h))[0]) / (2 * h)
    np.testing.assert_allclose(green_normal_derivative_arc(z), fd, atol=1e-6)


def test_ld_eval_without_green_term():
    params = LDParams(omega=0.1, zeta=0.0, tau=0.0, tau_bar=0.02)
    z = np.array([0.3 + 0.2j, 0.7 - 0.4j])
    value, grad, hess = ld_eval(params, z)
    np.testing.assert_allclose(value, 0.1 * z.real, atol=1e-15)
    np.testing.assert_allclose(grad, [[0.1, 0.0], [0.1, 0.0]], atol=1e-15)
    assert np.all(hess == 0)


def test_ld_solution_diameter_flux():
    # -d/dx of phi on the diameter x = 0 is the outward derivative
    params = calibrate_tau(0.1)
    y = np.linspace(-0.95, 0.95, 21)
    _, grad, _ = ld_eval(params, 1j * y)
    np.testing.assert_allclose(-grad[:, 0], -params.omega, atol=1e-12)


def test_tau_bar_examples():
    assert tau_bar_of(0.1) == pytest.approx(0.025563, abs=1e-5)
    assert tau_bar_of(0.1) == pytest.approx(tau_bar_oracle(0.1), rel=1e-13)
    assert calibrate_tau(0.1).tau == tau_bar_of(0.1)
    assert calibrate_tau(0.1, zeta=0.01).tau == pytest.approx(0.028252, abs=1e-5)
    assert calibrate_tau(0.1, zeta=0.01).tau == pytest.approx(math.e**0.1 * tau_bar_oracle(0.1), rel=1e-13)


@given(st.floats(0.01, 0.3))
def test_tau_bar_formula(omega):
    assert tau_bar_of(omega) == pytest.approx(tau_bar_oracle(omega), rel=1e-12)


def test_calibration_errors():
    with pytest.raises(DialRangeError):
        calibrate_tau(0.1, zeta=0.03)
    with pytest.raises(DialRangeError):
        calibrate_tau(0.5)
    with pytest.raises(DialRangeError):
        calibrate_tau(0.1, alpha=1.0)


def test_mismatch_examples():
    tau = 4 / math.e
    assert mismatch(LDParams(0.17, 0.0, tau, tau)) == pytest.approx(0.17, abs=1e-15)
    params = LDParams(omega=0.1, zeta=0.0, tau=0.02, tau_bar=0.02)
    # direct evaluation of tau (1 + ln(tau/4)) + omega
    assert mismatch(params) == pytest.approx(0.014033652669, abs=1e-12)
    with pytest.raises(ValueError):
        mismatch(params, mode="spline")
    with pytest.raises(IllConditionedFitError):
        mismatch(params, mode="numeric_fit", radii=[1e-12, 1e-4])


@pytest.mark.parametrize("omega", [0.05, 0.1, 0.2])
def test_numeric_fit_within_envelope(omega):
    params = calibrate_tau(omega)
    gap = abs(mismatch(params) - mismatch(params, "numeric_fit"))
    assert gap <= mismatch_envelope(params, FIT_RADII)


def test_obstruction_supports():
    params = calibrate_tau(0.1)
    basis = obstruction_fields(params)
    d = params.delta_obs
    # points at prescribed |f| along the real axis: z = f^{-1}(r) = (1 - r)/(1 + r)
    far = conformal_f(np.array([2.1 * d, 0.3, 0.6]) + 0j)
    near = conformal_f(np.array([0.0, 0.5 * d, 0.95 * d]) + 0j)
    assert np.all(basis.v_bar(far) == 0)
    np.testing.assert_allclose(basis.v_bar(near), near.real, atol=1e-15)
    assert basis.v_bar(1.0 + 0j) == pytest.approx(1.0)
    assert np.max(np.abs(basis.w(near))) <= 1e-12
    assert np.max(np.abs(basis.w(far))) == 0
    # v_hat is omega v near the diameter and 0 near p
    assert basis.v_hat(0.95 * 1j + 0.01) == pytest.approx(0.1 * 0.01)
    assert basis.v_hat(conformal_f(0.2 + 0j)) == 0


def test_obstruction_laplacian_matches_differences():
    basis = obstruction_fields(calibrate_tau(0.1))
    d = basis.params.delta_obs
    z = conformal_f(np.linspace(1.1 * d, 1.9 * d, 9) * np.exp(0.3j))
    h = 1e-5
    lap = sum(basis.v_bar(z + o) for o in (h, -h, 1j * h, -1j * h)) - 4 * basis.v_bar(z)
    np.testing.assert_allclose(basis.w(z), lap / h**2, rtol=1e-3, atol=1e-3)


def test_obstruction_fields_even_under_conjugation():
    basis = obstruction_fields(calibrate_tau(0.1))
    rng = np.random.default_rng(5)
    z = half_disk_points(rng, 200)
    for fn in (basis.v_bar, basis.w, basis.v_hat, basis.w_hat):
        np.testing.assert_allclose(fn(z), fn(np.conj(z)), atol=1e-12)
