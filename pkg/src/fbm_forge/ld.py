"""Closed-form linearized doubling solutions on the half-disk.

Points of the plane are complex numbers ``z = x + iy``. The half-disk is
``{|z| <= 1, Re z >= 0}``, its singular point is ``p = 1`` and its
diameter lies on the imaginary axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .cutoffs import psi_cut, psi_cut_derivatives
from .errors import DialRangeError, IllConditionedFitError, PoleError, SingularPointError

OBSTRUCTION_RADIUS = 1.0 / 100.0
# the bending cutoff switches from 0 to 1 exactly across |f| in [BEND_INNER, BEND_OUTER]
BEND_INNER, BEND_OUTER = 0.4, 0.98
BEND_CUT = (2.0 * BEND_INNER - BEND_OUTER, 2.0 * BEND_OUTER - BEND_INNER)
OMEGA_MAX = 0.3
FIT_RADII = 1e-4 * 2.0 ** np.arange(4)
FIT_DIRECTIONS = 16
_FIT_FLOOR = 1e-10


@dataclass(frozen=True)
class LDParams:
    """The scalar dials indexing one member of the construction."""

    omega: float
    zeta: float
    tau: float
    tau_bar: float
    alpha: float = 0.3
    delta_obs: float = OBSTRUCTION_RADIUS

    @property
    def delta_prime(self) -> float:
        return self.tau**self.alpha

    @property
    def mismatch(self) -> float:
        return mismatch_closed_form(self.tau, self.omega)

    def with_tau(self, tau: float) -> "LDParams":
        return replace(self, tau=tau)

    def as_dict(self) -> dict:
        return {
            "omega": self.omega,
            "zeta": self.zeta,
            "tau": self.tau,
            "tau_bar": self.tau_bar,
            "alpha": self.alpha,
            "delta_prime": self.delta_prime,
            "delta_obs": self.delta_obs,
        }


def conformal_f(z):
    """The involution ``(1 - z)/(1 + z)`` exchanging p = 1 and 0."""
    z = np.asarray(z, dtype=complex)
    if np.any(z == -1):
        raise PoleError("conformal map has a pole at z = -1")
    out = (1.0 - z) / (1.0 + z)
    return complex(out) if out.ndim == 0 else out


def conformal_f_prime(z):
    z = np.asarray(z, dtype=complex)
    return -2.0 / (1.0 + z) ** 2


def _check_regular(z):
    if np.any(np.abs(np.asarray(z) - 1.0) == 0.0):
        raise SingularPointError("Green's function is singular at p = 1")


def green_G(z):
    """Value, gradient and Hessian of ``1 + Re(z log((1-z)/(1+z)))``.

    Gradient and Hessian are with respect to (x, y); arrays gain trailing
    axes of length 2 and (2, 2).
    """
    z = np.asarray(z, dtype=complex)
    _check_regular(z)
    log_f = np.log((1.0 - z) / (1.0 + z))
    one_minus_sq = 1.0 - z * z
    h1 = log_f - 2.0 * z / one_minus_sq
    h2 = -2.0 / one_minus_sq - 2.0 * (1.0 + z * z) / one_minus_sq**2
    value = 1.0 + np.real(z * log_f)
    grad = np.stack([np.real(h1), -np.imag(h1)], axis=-1)
    hess = np.empty(z.shape + (2, 2))
    hess[..., 0, 0] = np.real(h2)
    hess[..., 0, 1] = hess[..., 1, 0] = -np.imag(h2)
    hess[..., 1, 1] = -np.real(h2)
    if z.ndim == 0:
        return float(value), grad, hess
    return value, grad, hess


def green_normal_derivative_arc(z):
    """Outward radial derivative of G at points of the unit circle."""
    z = np.asarray(z, dtype=complex)
    _check_regular(z)
    h1 = np.log((1.0 - z) / (1.0 + z)) - 2.0 * z / (1.0 - z * z)
    return np.real(z * h1) / np.abs(z)


def tau_bar_of(omega: float) -> float:
    log_w = math.log(omega)
    return math.exp(math.log((4.0 / math.e) * abs(log_w)) / log_w) * omega / abs(log_w)


def calibrate_tau(omega: float, zeta: float = 0.0, alpha: float = 0.3, omega_max: float = OMEGA_MAX) -> LDParams:
    """Bridge size for the bending angle ``omega`` and the dial ``zeta``."""
    if not 0.0 < omega <= omega_max:
        raise DialRangeError(f"bending angle {omega} outside (0, {omega_max}]")
    if not 0.0 < alpha < 1.0:
        raise DialRangeError(f"bridge radius exponent {alpha} outside (0, 1)")
    tau_bar = tau_bar_of(omega)
    if abs(zeta) > tau_bar * (1.0 + 1e-12):
        raise DialRangeError(f"|zeta| = {abs(zeta):.6g} exceeds tau_bar = {tau_bar:.6g}")
    tau = math.exp(zeta / omega) * tau_bar
    if not 0.0 < tau < 1.0:
        raise DialRangeError(f"bridge size {tau} outside (0, 1)")
    return LDParams(omega=omega, zeta=zeta, tau=tau, tau_bar=tau_bar, alpha=alpha)


def ld_eval(params: LDParams, z):
    """Value, gradient and Hessian of ``tau G + omega Re z``."""
    value, grad, hess = green_G(z)
    value = params.tau * value + params.omega * np.real(np.asarray(z, dtype=complex))
    grad = params.tau * grad
    grad[..., 0] += params.omega
    return value, grad, params.tau * hess


def mismatch_closed_form(tau: float, omega: float) -> float:
    return tau * math.log(math.e * tau / 4.0) + omega


def mismatch(params: LDParams, mode: str = "closed_form", radii=FIT_RADII, directions: int = FIT_DIRECTIONS) -> float:
    """Constant term of the logarithmic expansion at p.

    ``numeric_fit`` averages ``phi - tau log(2 d_p / tau)`` over a ring of
    points inside the half-disk at each radius in ``radii``.
    """
    if mode == "closed_form":
        return mismatch_closed_form(params.tau, params.omega)
    if mode != "numeric_fit":
        raise ValueError(f"unknown mismatch mode {mode!r}")
    radii = np.asarray(radii, dtype=float)
    if np.min(radii) < _FIT_FLOOR:
        raise IllConditionedFitError(f"fit radius {np.min(radii):.3g} below floor {_FIT_FLOOR:g}")
    angles = np.pi / 2 + np.pi * (np.arange(directions) + 0.5) / directions
    pts = 1.0 + radii[:, None] * np.exp(1j * angles)[None, :]
    phi, _, _ = ld_eval(params, pts)
    consts = phi - params.tau * np.log(2.0 * radii[:, None] / params.tau)
    return float(np.mean(consts))


def mismatch_envelope(params: LDParams, radii=FIT_RADII) -> float:
    """Size of the remainder term of the expansion at the largest fit radius."""
    d = float(np.max(radii))
    return (params.tau + params.omega) * d * abs(math.log(d))


def _radial_cutoff_fields(z, a, b, scale=1.0):
    """Value, x-derivative, Laplacian of ``scale * psi_cut[a,b](|f(z)|) * Re z``."""
    z = np.asarray(z, dtype=complex)
    f = conformal_f(z)
    fp = conformal_f_prime(z)
    r = np.abs(f)
    chi, chi1, chi2 = psi_cut_derivatives(a, b, r)
    with np.errstate(divide="ignore", invalid="ignore"):
        dr_dx = np.where(r > 0, np.real(np.conj(f) * fp) / np.where(r > 0, r, 1.0), 0.0)
        radial_lap = np.where(r > 0, chi2 + chi1 / np.where(r > 0, r, 1.0), 0.0)
    x = np.real(z)
    lap_chi = np.abs(fp) ** 2 * radial_lap
    value = scale * chi * x
    lap = scale * (x * lap_chi + 2.0 * chi1 * dr_dx)
    return value, lap


@dataclass(frozen=True)
class ObstructionBasis:
    """Callables for the cut-off coordinate functions and their Laplacians."""

    params: LDParams

    def v_bar(self, z):
        """Coordinate function near p, cut off exactly across |f| in [delta, 2 delta]."""
        d = self.params.delta_obs
        return _radial_cutoff_fields(z, 3 * d, 0.0)[0]

    def w(self, z):
        d = self.params.delta_obs
        return _radial_cutoff_fields(z, 3 * d, 0.0)[1]

    def v_hat(self, z):
        """``omega`` times the coordinate function near the diameter, 0 near p."""
        return _radial_cutoff_fields(z, *BEND_CUT, self.params.omega)[0]

    def w_hat(self, z):
        return _radial_cutoff_fields(z, *BEND_CUT, self.params.omega)[1]

    def bend_angle(self, z):
        """Rotation angle of the base surface: omega near the diameter, 0 near p."""
        r = np.abs(conformal_f(z))
        return self.params.omega * psi_cut(*BEND_CUT, r)


def obstruction_fields(params: LDParams) -> ObstructionBasis:
    return ObstructionBasis(params)


def robin_residual(samples: int = 100, exclusion: float = 0.05) -> float:
    """Max of |dG/dn - G| over arc samples away from the points +-1."""
    theta = np.linspace(-np.pi / 2, np.pi / 2, samples)
    z = np.exp(1j * theta)
    keep = (np.abs(z - 1) >= exclusion) & (np.abs(z + 1) >= exclusion)
    z = z[keep]
    g, _, _ = green_G(z)
    return float(np.max(np.abs(green_normal_derivative_arc(z) - g)))


def harmonicity_residual(samples: int = 1000, exclusion: float = 0.05, step: float = 1e-2) -> float:
    """Max |Laplacian of G| at about ``samples`` half-disk points away from p.

    The Laplacian is a 4th-order difference of the values of G, so it does
    not share code with the closed-form Hessian.
    """
    side = int(math.ceil(math.sqrt(2.0 * samples)))
    xs = np.linspace(0.0, 1.0, side)
    ys = np.linspace(-1.0, 1.0, 2 * side)
    z = (xs[:, None] + 1j * ys[None, :]).ravel()
    z = z[(np.abs(z) <= 1.0) & (np.abs(z - 1.0) >= exclusion)][:samples]
    w = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12.0 * step**2)
    lap = np.zeros(z.shape)
    for k, o in enumerate(range(-2, 3)):
        lap += w[k] * (green_G(z + o * step)[0] + green_G(z + 1j * o * step)[0])
    return float(np.max(np.abs(lap)))
