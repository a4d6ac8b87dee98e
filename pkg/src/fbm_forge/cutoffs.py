"""Smooth cutoff calculus and sampled weighted norms."""
from __future__ import annotations

import numpy as np

from .errors import DegenerateCutoffError, OutOfDomainError

# Steepness of the affine map inside ``psi_cut``: the transition happens
# on the middle third of [a, b].
_CUT_HALF_WIDTH = 3.0


def _bump_tail(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    live = s > -1.0
    out[live] = np.exp(-1.0 / (1.0 + s[live]))
    return out


def smooth_step(s):
    """Smooth monotone step: 0 for s <= -1, 1 for s >= 1, odd about 1/2.

    Works elementwise on arrays and returns a float for scalar input.
    """
    s_arr = np.asarray(s, dtype=float)
    left = _bump_tail(s_arr)
    right = _bump_tail(-s_arr)
    denom = left + right
    with np.errstate(invalid="ignore", divide="ignore"):
        val = np.where(denom > 0, left / np.where(denom > 0, denom, 1.0), 0.0)
    val = np.where(s_arr >= 1.0, 1.0, np.where(s_arr <= -1.0, 0.0, val))
    return float(val) if np.ndim(s) == 0 else val


def _step_derivatives(s):
    """Return (value, first, second) derivative of ``smooth_step`` at s."""
    s = np.asarray(s, dtype=float)
    inside = (s > -1.0) & (s < 1.0)
    val = np.asarray(smooth_step(s), dtype=float)
    d1 = np.zeros_like(s)
    d2 = np.zeros_like(s)
    if np.any(inside):
        x = s[inside]
        # log-derivatives of B(x) and B(-x)
        a = np.exp(-1.0 / (1.0 + x))
        b = np.exp(-1.0 / (1.0 - x))
        la1 = 1.0 / (1.0 + x) ** 2
        lb1 = -1.0 / (1.0 - x) ** 2
        la2 = -2.0 / (1.0 + x) ** 3
        lb2 = -2.0 / (1.0 - x) ** 3
        a1, b1 = a * la1, b * lb1
        a2 = a * (la1**2 + la2)
        b2 = b * (lb1**2 + lb2)
        den = a + b
        den1 = a1 + b1
        den2 = a2 + b2
        f = a / den
        f1 = (a1 - f * den1) / den
        f2 = (a2 - 2.0 * f1 * den1 - f * den2) / den
        d1[inside] = f1
        d2[inside] = f2
    return val, d1, d2


def _affine(a, b):
    if a == b:
        raise DegenerateCutoffError(f"cutoff endpoints coincide: a = b = {a}")
    slope = 2.0 * _CUT_HALF_WIDTH / (b - a)
    return slope, -_CUT_HALF_WIDTH - slope * a


def psi_cut(a: float, b: float, x):
    """Cutoff equal to 0 near ``a`` and 1 near ``b``."""
    slope, shift = _affine(a, b)
    if np.ndim(x) == 0:
        return smooth_step(slope * float(x) + shift)
    return smooth_step(slope * np.asarray(x, dtype=float) + shift)


def psi_cut_derivatives(a: float, b: float, x):
    """Value and first two derivatives in ``x`` of ``psi_cut(a, b, x)``."""
    slope, shift = _affine(a, b)
    val, d1, d2 = _step_derivatives(slope * np.asarray(x, dtype=float) + shift)
    return val, slope * d1, slope**2 * d2


def blend(a: float, b: float, d, f0, f1, x=None):
    """Interpolate from ``f0`` (where d is near a) to ``f1`` (near b).

    The arguments are either values already evaluated at the points of
    interest, or callables evaluated at ``x``.
    """
    if x is not None:
        d, f0, f1 = (g(x) if callable(g) else g for g in (d, f0, f1))
    cut = psi_cut(a, b, d)
    return cut * np.asarray(f1) + (1.0 - cut) * np.asarray(f0)


def weighted_norm(derivs, rho, gamma_hat: float = 0.5, k: int = 0, weight=None, domain_mask=None) -> float:
    """Sampled weighted C^k norm.

    ``derivs`` is a sequence whose entry j holds the pointwise magnitude
    of the j-th derivative at every sample (j = 0..k). The result is the
    max over samples of ``rho**-gamma_hat * max_j rho**j |D^j u|`` divided
    by the optional weight field.
    """
    if not 0 <= k <= 2:
        raise ValueError("derivative order must be 0, 1 or 2")
    if len(derivs) < k + 1:
        raise ValueError(f"need {k + 1} derivative arrays, got {len(derivs)}")
    rho = np.asarray(rho, dtype=float)
    if domain_mask is not None and not np.all(domain_mask):
        raise OutOfDomainError("weighted norm sampled outside its chart")
    if np.any(rho <= 0):
        raise OutOfDomainError("scale field must be positive at samples")
    terms = [rho**j * np.abs(np.asarray(derivs[j], dtype=float)) for j in range(k + 1)]
    local = np.max(np.stack(np.broadcast_arrays(*terms)), axis=0) * rho ** (-gamma_hat)
    if weight is not None:
        local = local / np.asarray(weight, dtype=float)
    if local.size == 0:
        return 0.0
    return float(np.max(local))
