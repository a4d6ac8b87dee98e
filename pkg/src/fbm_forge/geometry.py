"""Chart geometry, the auxiliary conformal metric and its exponential map.

Conventions: the unit normal of a chart is ``orientation * X_1 x X_2``
normalized; the second fundamental form is ``A_ab = -<X_ab, nu>`` and the
mean curvature is its metric trace, so the unit sphere with outward
normal has ``H = 2`` and a normal graph ``X + u nu`` over a plane has
``H = -Laplacian(u)`` to first order.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Dict, Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import make_interp_spline

from . import fd
from .cutoffs import psi_cut_derivatives
from .errors import ChartDegeneracyError, NearConePointError, SlidingDomainError

# the conformal factor is exactly 1 below FLAT_CORE and exactly 1/|x| above
# CONE_SHELL; a wide transition keeps normal graphs of moderate height
# from folding there
FLAT_CORE = 0.27
CONE_SHELL = 0.57
# sliding is only used well inside the cone shell
CONE_RADIUS = 2.0 / 3.0
CONE_GUARD = 0.05
GEODESIC_STEP = 5e-4
CONDITION_LIMIT = 1e8

E_X = np.array([1.0, 0.0, 0.0])
E_Y = np.array([0.0, 1.0, 0.0])
E_Z = np.array([0.0, 0.0, 1.0])

EDGES = ("u1_lo", "u1_hi", "u2_lo", "u2_hi")


def rotation_about_axis(theta: float) -> np.ndarray:
    """Rotation about the y-axis taking the x-axis toward the z-axis."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])


def reflection_matrix(normal) -> np.ndarray:
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    return np.eye(3) - 2.0 * np.outer(n, n)


def tilted_plane_normal(omega: float) -> np.ndarray:
    """Normal of the plane through the axis at angle pi/2 + omega from z = 0."""
    return rotation_about_axis(omega) @ E_X


# --------------------------------------------------------------------------
# charts and pointwise geometry


@dataclass
class SurfaceChart:
    """A parametric patch over a rectangle of coordinates.

    ``immersion`` maps coordinate arrays (U1, U2) to points (..., 3) in the
    chart's local frame; ``frame`` maps local coordinates to world ones.
    ``reflections`` holds local 3x3 reflection matrices for edges tagged as
    mirror lines; those edges get reflected ghost layers.
    """

    name: str
    u1: np.ndarray
    u2: np.ndarray
    immersion: Optional[Callable]
    edges: Dict[str, str]
    reflections: Dict[str, np.ndarray] = field(default_factory=dict)
    orientation: int = 1
    frame: np.ndarray = field(default_factory=lambda: np.eye(3))
    region: str = "disk"
    extends: bool = True

    @property
    def shape(self):
        return (len(self.u1), len(self.u2))

    @property
    def h1(self) -> float:
        return float(self.u1[1] - self.u1[0])

    @property
    def h2(self) -> float:
        return float(self.u2[1] - self.u2[0])

    def mesh(self):
        return np.meshgrid(self.u1, self.u2, indexing="ij")

    def nodes(self) -> np.ndarray:
        U1, U2 = self.mesh()
        return self.immersion(U1, U2)

    def to_world(self, pts):
        return np.asarray(pts) @ self.frame.T

    def to_local(self, pts):
        return np.asarray(pts) @ self.frame

    def edge_index(self, edge: str):
        n1, n2 = self.shape
        return {
            "u1_lo": (0, slice(None)),
            "u1_hi": (n1 - 1, slice(None)),
            "u2_lo": (slice(None), 0),
            "u2_hi": (slice(None), n2 - 1),
        }[edge]

    def edges_tagged(self, tag: str):
        return [e for e in EDGES if self.edges.get(e) == tag]

    def parity(self, edge: str, component: int):
        """Parity of a position component under the mirror at ``edge``."""
        refl = self.reflections.get(edge)
        return None if refl is None else float(refl[component, component])


@dataclass
class GeomFields:
    """Pointwise geometry of a chart sample."""

    X: np.ndarray
    X1: np.ndarray
    X2: np.ndarray
    X11: np.ndarray
    X12: np.ndarray
    X22: np.ndarray
    metric: np.ndarray
    metric_inv: np.ndarray
    normal: np.ndarray
    second_form: np.ndarray
    mean_curvature: np.ndarray
    second_form_sq: np.ndarray
    christoffel: np.ndarray
    area_density: np.ndarray

    def boundary_angle(self) -> np.ndarray:
        return np.einsum("...i,...i->...", self.X, self.normal)


def geom_from_derivatives(X, X1, X2, X11, X12, X22, orientation: int = 1, check: bool = True) -> GeomFields:
    dot = lambda a, b: np.einsum("...i,...i->...", a, b)
    g11, g12, g22 = dot(X1, X1), dot(X1, X2), dot(X2, X2)
    det = g11 * g22 - g12 * g12
    if check:
        tr = g11 + g22
        disc = np.sqrt(np.maximum(tr * tr / 4 - det, 0.0))
        lam_min = tr / 2 - disc
        lam_max = tr / 2 + disc
        if np.any(lam_min <= 0) or np.any(lam_max > CONDITION_LIMIT * lam_min):
            worst = float(np.max(lam_max / np.maximum(lam_min, 1e-300)))
            raise ChartDegeneracyError(f"metric condition number {worst:.3g} exceeds {CONDITION_LIMIT:g}")
    metric = np.stack([np.stack([g11, g12], -1), np.stack([g12, g22], -1)], -2)
    inv = np.stack([np.stack([g22, -g12], -1), np.stack([-g12, g11], -1)], -2) / det[..., None, None]
    N = orientation * np.cross(X1, X2)
    nu = N / np.linalg.norm(N, axis=-1, keepdims=True)
    A11, A12, A22 = -dot(X11, nu), -dot(X12, nu), -dot(X22, nu)
    A = np.stack([np.stack([A11, A12], -1), np.stack([A12, A22], -1)], -2)
    H = np.einsum("...ab,...ab->...", inv, A)
    shape_op = np.einsum("...ac,...cb->...ab", inv, A)
    A_sq = np.einsum("...ab,...ba->...", shape_op, shape_op)
    second = np.stack([np.stack([X11, X12], -2), np.stack([X12, X22], -2)], -3)
    tangents = np.stack([X1, X2], -2)
    lowered = np.einsum("...abi,...di->...abd", second, tangents)
    christoffel = np.einsum("...cd,...abd->...cab", inv, lowered)
    return GeomFields(X, X1, X2, X11, X12, X22, metric, inv, nu, A, H, A_sq, christoffel, np.sqrt(det))


def fundamental_forms(chart: SurfaceChart, h: Optional[float] = None, U1=None, U2=None) -> GeomFields:
    """Geometry at the chart nodes from 4th-order differences of the immersion.

    Stencils have step ``h`` in both coordinates (default: 1e-2 of the
    smaller coordinate extent). They are centered when the immersion
    extends past the rectangle and one-sided at edges otherwise.
    """
    if U1 is None:
        U1, U2 = chart.mesh()
    ext1 = float(chart.u1[-1] - chart.u1[0])
    ext2 = float(chart.u2[-1] - chart.u2[0])
    if h is None:
        h = 1e-2 * min(ext1, ext2)
    if chart.extends:
        off_lo1 = off_lo2 = np.full(U1.shape, 2)
        off_hi1 = off_hi2 = np.full(U1.shape, 2)
    else:
        off_lo1 = np.minimum(np.floor((U1 - chart.u1[0]) / h + 1e-9), 2)
        off_hi1 = np.minimum(np.floor((chart.u1[-1] - U1) / h + 1e-9), 2)
        off_lo2 = np.minimum(np.floor((U2 - chart.u2[0]) / h + 1e-9), 2)
        off_hi2 = np.minimum(np.floor((chart.u2[-1] - U2) / h + 1e-9), 2)

    def weights(lo, hi, order):
        # per node weights over offsets -5..5
        out = np.zeros(lo.shape + (11,))
        for a in range(3):
            for b in range(3):
                mask = (lo == a) & (hi == b)
                if not np.any(mask):
                    continue
                if a == 2 and b == 2:
                    offs = tuple(range(-2, 3))
                else:
                    size = 5 if order == 1 else 6
                    start = -a if a < 2 else -(size - 1 - b)
                    offs = tuple(range(start, start + size))
                w = fd.stencil_weights(offs, order)
                for o, wk in zip(offs, w):
                    out[mask, o + 5] = wk
        return out

    w1 = weights(off_lo1, off_hi1, 1) / h
    w11 = weights(off_lo1, off_hi1, 2) / h**2
    w2 = weights(off_lo2, off_hi2, 1) / h
    w22 = weights(off_lo2, off_hi2, 2) / h**2
    imm = chart.immersion
    X = imm(U1, U2)
    X1 = np.zeros_like(X)
    X11 = np.zeros_like(X)
    X2 = np.zeros_like(X)
    X22 = np.zeros_like(X)
    X12 = np.zeros_like(X)
    for k in range(-5, 6):
        a1, a11 = w1[..., k + 5], w11[..., k + 5]
        m = (a1 != 0) | (a11 != 0)
        if np.any(m):
            P = np.zeros_like(X)
            P[m] = imm(U1[m] + k * h, U2[m])
            X1 += a1[..., None] * P
            X11 += a11[..., None] * P
        b2, b22 = w2[..., k + 5], w22[..., k + 5]
        m = (b2 != 0) | (b22 != 0)
        if np.any(m):
            P = np.zeros_like(X)
            P[m] = imm(U1[m], U2[m] + k * h)
            X2 += b2[..., None] * P
            X22 += b22[..., None] * P
    for k in range(-5, 6):
        for l in range(-5, 6):
            c = w1[..., k + 5] * w2[..., l + 5]
            m = c != 0
            if np.any(m):
                P = np.zeros_like(X)
                P[m] = imm(U1[m] + k * h, U2[m] + l * h)
                X12 += c[..., None] * P
    return geom_from_derivatives(X, X1, X2, X11, X12, X22, chart.orientation)


def boundary_angle(fields: GeomFields, chart: SurfaceChart, edge: str) -> np.ndarray:
    """Inner product of position and unit normal along a spherical edge."""
    if chart.edges.get(edge) != "spherical":
        raise ValueError(f"edge {edge} of chart {chart.name} is not spherical")
    return fields.boundary_angle()[chart.edge_index(edge)]


# --------------------------------------------------------------------------
# grid differentiation of node arrays


@dataclass(frozen=True)
class GridStencil:
    """Fourth-order difference operators for one chart grid."""

    n1: int
    n2: int
    h1: float
    h2: float
    ghost: Dict[str, bool]

    @classmethod
    def for_chart(cls, chart: SurfaceChart) -> "GridStencil":
        ghost = {e: e in chart.reflections for e in EDGES}
        n1, n2 = chart.shape
        return cls(n1, n2, chart.h1, chart.h2, ghost)

    def pads(self, axis: int):
        lo, hi = ("u1_lo", "u1_hi") if axis == 0 else ("u2_lo", "u2_hi")
        return (fd.GHOSTS if self.ghost[lo] else 0, fd.GHOSTS if self.ghost[hi] else 0)

    def d(self, axis: int, order: int) -> np.ndarray:
        n, h = (self.n1, self.h1) if axis == 0 else (self.n2, self.h2)
        lo, hi = self.pads(axis)
        return fd.diff_matrix(n, h, order, lo, hi)

    def pad_positions(self, X: np.ndarray, chart: SurfaceChart) -> np.ndarray:
        R = chart.reflections
        Xp = fd.pad_reflect(X, 1, R.get("u2_lo"), R.get("u2_hi"))
        return fd.pad_reflect(Xp, 0, R.get("u1_lo"), R.get("u1_hi"))

    def derivatives(self, Xp: np.ndarray):
        """First and second derivatives at core nodes of a padded array."""
        lo0, hi0 = self.pads(0)
        lo1, hi1 = self.pads(1)
        core0 = slice(lo0, lo0 + self.n1)
        core1 = slice(lo1, lo1 + self.n2)
        X = Xp[core0, core1]
        X1 = fd.apply_axis(self.d(0, 1), Xp[:, core1], 0)
        X11 = fd.apply_axis(self.d(0, 2), Xp[:, core1], 0)
        Y2 = fd.apply_axis(self.d(1, 1), Xp, 1)
        X2 = Y2[core0]
        X22 = fd.apply_axis(self.d(1, 2), Xp[core0], 1)
        X12 = fd.apply_axis(self.d(0, 1), Y2, 0)
        return X, X1, X2, X11, X12, X22

    def scalar_operators(self, parities0, parities1):
        """Sparse D1, D2 on row-major scalar fields with given edge parities.

        ``parities0``/``parities1`` are (lo, hi) tuples of +1/-1/None for the
        u1 and u2 axes.
        """
        F0 = fd.fold_matrix(self.n1, *parities0)
        F1 = fd.fold_matrix(self.n2, *parities1)
        d10 = self.d(0, 1) @ F0
        d20 = self.d(0, 2) @ F0
        d11 = self.d(1, 1) @ F1
        d21 = self.d(1, 2) @ F1
        op = fd.sparse_axis_operator
        return {
            "1": op(self.n1, self.n2, d10, None),
            "11": op(self.n1, self.n2, d20, None),
            "2": op(self.n1, self.n2, None, d11),
            "22": op(self.n1, self.n2, None, d21),
            "12": op(self.n1, self.n2, d10, d11),
        }


def grid_fields(X: np.ndarray, chart: SurfaceChart, stencil: Optional[GridStencil] = None, check: bool = True) -> GeomFields:
    """Geometry of a node array using the chart's grid stencils."""
    stencil = stencil or GridStencil.for_chart(chart)
    Xp = stencil.pad_positions(X, chart)
    return geom_from_derivatives(*stencil.derivatives(Xp), orientation=chart.orientation, check=check)


# --------------------------------------------------------------------------
# auxiliary metric


def cone_fraction(d):
    """Smooth step from 0 on the flat core to 1 on the cone shell, and its derivative."""
    width = CONE_SHELL - FLAT_CORE
    # psi_cut switches on the middle third of its interval
    cut, cut1, _ = psi_cut_derivatives(FLAT_CORE - width, CONE_SHELL + width, np.asarray(d, dtype=float))
    return cut, cut1


@lru_cache(maxsize=1)
def _log_factor_table(samples: int = 4001):
    t = np.linspace(FLAT_CORE, CONE_SHELL, samples)
    cut, _ = cone_fraction(t)
    return t, -cumulative_trapezoid(cut / t, t, initial=0.0)


def aux_conformal_factor(d):
    """Conformal factor and its d-derivative.

    The factor solves ``d log(Omega)/dd = -c(d)/d`` with ``c`` the cone
    fraction, so it is 1 on the flat core and ``K/d`` on the cone shell.
    Blending the logarithmic derivative rather than Omega keeps the
    geodesic coefficients free of large second derivatives.
    """
    d = np.asarray(d, dtype=float)
    t, table = _log_factor_table()
    safe = np.where(d > 0, d, 1.0)
    log_om = np.interp(d, t, table) - np.log(np.maximum(safe / CONE_SHELL, 1.0))
    omega = np.exp(log_om)
    cut, _ = cone_fraction(d)
    omega1 = -omega * cut / safe
    return omega, omega1


@lru_cache(maxsize=1)
def _cone_fraction_spline(samples: int = 2001):
    # quintic interpolation reproduces the cutoff to rounding at this density
    t = np.linspace(FLAT_CORE, CONE_SHELL, samples)
    return make_interp_spline(t, cone_fraction(t)[0], k=5)


def _log_factor_slope(r):
    """``d log(Omega)/dd = -c(d)/d`` from the tabulated cone fraction."""
    inside = (r > FLAT_CORE) & (r < CONE_SHELL)
    cut = np.where(r >= CONE_SHELL, 1.0, 0.0)
    if np.any(inside):
        cut[inside] = _cone_fraction_spline()(r[inside])
    return -cut / np.where(r > 0, r, 1.0)


def _geodesic_accel(x, v):
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    grad_f = _log_factor_slope(r[..., 0])[..., None] * x / np.where(r > 0, r, 1.0)
    gv = np.sum(grad_f * v, axis=-1, keepdims=True)
    vv = np.sum(v * v, axis=-1, keepdims=True)
    return -2.0 * gv * v + vv * grad_f


def geodesic_rk4(x0, v0, steps: int, cone_guard: float = CONE_GUARD):
    """Integrate the auxiliary geodesic equation over unit parameter time."""
    x = np.array(x0, dtype=float)
    v = np.array(v0, dtype=float)
    dt = 1.0 / steps
    rmin = np.linalg.norm(x, axis=-1)
    for _ in range(steps):
        k1x, k1v = v, _geodesic_accel(x, v)
        k2x, k2v = v + 0.5 * dt * k1v, _geodesic_accel(x + 0.5 * dt * k1x, v + 0.5 * dt * k1v)
        k3x, k3v = v + 0.5 * dt * k2v, _geodesic_accel(x + 0.5 * dt * k2x, v + 0.5 * dt * k2v)
        k4x, k4v = v + dt * k3v, _geodesic_accel(x + dt * k3x, v + dt * k3v)
        x = x + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        v = v + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        rmin = np.minimum(rmin, np.linalg.norm(x, axis=-1))
    if np.any(rmin <= cone_guard):
        raise NearConePointError(f"auxiliary geodesic reaches |x| = {float(np.min(rmin)):.3g} <= {cone_guard}")
    return x, v


def _cylinder_exp(x, V):
    """Exponential map of |dx|^2/|x|^2, a product of a line and a sphere."""
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    om = x / r
    radial = np.sum(V * om, axis=-1, keepdims=True)
    s_dot = radial / r
    ang = (V - radial * om) / r
    speed = np.linalg.norm(ang, axis=-1, keepdims=True)
    safe = np.where(speed > 0, speed, 1.0)
    direction = np.where(speed > 0, ang / safe, 0.0)
    new_om = np.cos(speed) * om + np.sin(speed) * direction
    return r * np.exp(s_dot) * new_om


def aux_exp(
    base,
    vec,
    arclen=1.0,
    cone_guard: float = CONE_GUARD,
    step: float = GEODESIC_STEP,
    method: str = "auto",
    margin: Optional[float] = None,
    steps: Optional[int] = None,
):
    """Auxiliary-metric exponential of ``arclen * vec`` at ``base``.

    Closed forms are used when the whole geodesic stays where the metric
    is Euclidean (straight line) or where it is ``|dx|^2/|x|^2``; other
    geodesics are integrated with RK4. ``method="rk4"`` forces integration.

    With ``margin`` the branch is chosen from the base point alone, valid
    for displacements shorter than ``margin``; together with a fixed
    ``steps`` this makes the map smooth in ``vec``, which matters when it
    is differentiated numerically.
    """
    base = np.asarray(base, dtype=float)
    vec = np.asarray(vec, dtype=float)
    V = np.asarray(arclen, dtype=float)[..., None] * vec
    base, V = np.broadcast_arrays(base, V)
    out = np.empty(base.shape)
    r0 = np.linalg.norm(base, axis=-1)
    if method == "rk4":
        todo = np.ones(r0.shape, dtype=bool)
    else:
        if margin is None:
            r1 = np.linalg.norm(base + V, axis=-1)
            euclid = (r0 <= FLAT_CORE) & (r1 <= FLAT_CORE)
            with np.errstate(divide="ignore", invalid="ignore"):
                radial = np.sum(V * base, axis=-1) / np.where(r0 > 0, r0 * r0, 1.0)
            cyl = (~euclid) & (r0 >= CONE_SHELL) & (r0 * np.exp(radial) >= CONE_SHELL)
        else:
            if np.any(np.linalg.norm(V, axis=-1) > margin):
                raise ValueError("displacement exceeds the branch margin")
            euclid = r0 + margin <= FLAT_CORE
            cyl = r0 - margin >= CONE_SHELL
        out[euclid] = base[euclid] + V[euclid]
        if np.any(cyl):
            out[cyl] = _cylinder_exp(base[cyl], V[cyl])
        todo = ~(euclid | cyl)
    if np.any(todo):
        xb, vb = base[todo], V[todo]
        if steps is None:
            om, _ = aux_conformal_factor(np.linalg.norm(xb, axis=-1))
            length = float(np.max(np.linalg.norm(vb, axis=-1) * om)) if len(vb) else 0.0
            steps = max(8, int(np.ceil(length / step)))
        out[todo], _ = geodesic_rk4(xb, vb, steps, cone_guard)
    return out


def aux_exp_plane_normal(p, z):
    """Closed form of the auxiliary geodesic leaving a point of z = 0 vertically."""
    p = np.asarray(p, dtype=float)
    r = np.linalg.norm(p, axis=-1, keepdims=True)
    z = np.asarray(z, dtype=float)[..., None]
    return np.cos(z / r) * p + r * np.sin(z / r) * E_Z


def graph_in_aux(chart: SurfaceChart, height: Callable, normal: Callable, name: Optional[str] = None) -> SurfaceChart:
    """Chart of the auxiliary-metric normal graph of ``height`` over ``chart``."""
    base = chart.immersion

    def immersion(U1, U2):
        return aux_exp(base(U1, U2), normal(U1, U2), height(U1, U2))

    return replace(chart, name=name or f"{chart.name}-graph", immersion=immersion)


@dataclass(frozen=True)
class SlideDecomposition:
    shift: np.ndarray
    slid: np.ndarray
    height: np.ndarray


def slide_decompose(q, u, du=None, smallness: float = 0.2) -> SlideDecomposition:
    """Rewrite the vertical graph of ``u`` over points of z = 0 as an auxiliary graph.

    Points are radially slid by ``V = q (sqrt(1 + (u/|q|)^2) - 1)`` and the
    auxiliary height over the slid point is ``|q'| arcsin(u / |q'|)``.
    """
    q = np.asarray(q, dtype=float)
    if q.shape[-1] == 2:
        q = np.concatenate([q, np.zeros(q.shape[:-1] + (1,))], axis=-1)
    u = np.asarray(u, dtype=float)
    r = np.linalg.norm(q, axis=-1)
    if np.any(r < CONE_RADIUS - 1e-12):
        raise SlidingDomainError(f"sliding needs |q| >= 2/3, got {float(np.min(r)):.4g}")
    size = float(np.max(np.abs(u))) if u.size else 0.0
    if du is not None and np.size(du):
        size = max(size, float(np.max(np.abs(du))))
    if size > smallness:
        raise SlidingDomainError(f"height size {size:.3g} exceeds sliding smallness {smallness}")
    factor = np.sqrt(1.0 + (u / r) ** 2)
    shift = q * (factor - 1.0)[..., None]
    slid = q + shift
    rs = r * factor
    return SlideDecomposition(shift, slid, rs * np.arcsin(u / rs))
