"""Base surface, catenoidal bridge, pre-initial and initial surfaces.

The fundamental piece is discretized by two charts, each in its own frame:

* ``bridge``: (t, theta) in [0, a] x [0, pi/2] on the catenoid about the
  vertical line through p = (1, 0, 0), world frame;
* ``disk``: log-polar coordinates (s, psi) around p, ``s = log|f(z)|`` and
  ``psi = -arg f(z)``, so psi >= 0 covers the same half y >= 0 as the
  bridge. Its frame is the rotation by ``omega`` about the axis, in which
  the tilted mirror plane is x = 0.

Both charts use the upward normal (orientation -1 in their coordinates).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .cutoffs import psi_cut, psi_cut_derivatives
from .errors import BridgeTooLargeError, ChartDegeneracyError, CollarError, SlidingDomainError
from .geometry import (
    CONE_SHELL,
    SurfaceChart,
    aux_exp,
    grid_fields,
    rotation_about_axis,
)
from .ld import (
    BEND_CUT,
    BEND_INNER,
    BEND_OUTER,
    OBSTRUCTION_RADIUS,
    OMEGA_MAX,
    LDParams,
    ObstructionBasis,
    calibrate_tau,
    conformal_f,
    conformal_f_prime,
    ld_eval,
)

BRIDGE_GRID = (96, 32)
DISK_GRID = (192, 64)
COLLAR_EPS = 1.6
# the collar cutoff must vanish on the symmetry axis, where sigma/rho >= 1
MAX_COLLAR_EPS = 1.8
CONSTRUCTION_ALPHA = 0.75
# obstruction radius relative to delta' at zeta = 0, so that tau << delta' << delta_obs
OBSTRUCTION_FACTOR = 1.5
# the disk chart reaches down to d_p = max(delta'/8, INNER_WAIST_FACTOR tau)
INNER_FRACTION = 1.0 / 8.0
INNER_WAIST_FACTOR = 1.5
GRAPH_STEPS = 64
PERTURB_MARGIN = 0.05
PERTURB_STEPS = 16
NORMAL_STEP = 1e-3
# Gaussian width of the inward angle extension per unit distance from the sphere
ANGLE_SMOOTHING = 0.5
CAT_ITERATIONS = 5
INVERSE_ITERATIONS = 12
# edge-angle profile: |y| based for d_p below BLEND_LO delta', chart based above BLEND_HI delta'
BLEND_LO, BLEND_HI, BLEND_REACH = 1.25, 2.0, 3.0

REGION_CODES = {"bridge": 0, "gluing": 1, "disk": 2}

_REFLECT_Y = np.diag([1.0, -1.0, 1.0])
_REFLECT_Z = np.diag([1.0, 1.0, -1.0])
_REFLECT_X = np.diag([-1.0, 1.0, 1.0])


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


# --------------------------------------------------------------------------
# disk coordinates


def disk_z(S, Psi):
    """Half-disk point with log-polar coordinates (s, psi) around p."""
    return conformal_f(np.exp(np.asarray(S) - 1j * np.asarray(Psi)))


def disk_coords(z):
    zeta = conformal_f(z)
    return np.log(np.abs(zeta)), -np.angle(zeta)


def construction_params(omega: float, zeta: float = 0.0, alpha: float = CONSTRUCTION_ALPHA, omega_max: float = OMEGA_MAX) -> LDParams:
    """Calibrated dials with the obstruction radius scaled to the bridge size."""
    params = calibrate_tau(omega, zeta, alpha, omega_max)
    delta_obs = max(OBSTRUCTION_RADIUS, OBSTRUCTION_FACTOR * params.tau_bar**alpha)
    return replace(params, delta_obs=delta_obs)


def with_zeta(params: LDParams, zeta: float) -> LDParams:
    """Same dials at another mismatch value, keeping the obstruction radius."""
    fresh = calibrate_tau(params.omega, zeta, params.alpha)
    return replace(fresh, delta_obs=params.delta_obs)


def inner_radius(params: LDParams) -> float:
    return max(INNER_FRACTION * params.delta_prime, INNER_WAIST_FACTOR * params.tau)


# --------------------------------------------------------------------------
# base surface


@dataclass(frozen=True)
class BaseSurface:
    """The half-disk with its diameter side rotated by ``omega`` about the axis.

    Points of the half-disk are complex numbers; the rotation angle is
    ``omega`` near the diameter, 0 near p, and interpolates across
    ``|f| in [0.8, 0.9]``.
    """

    params: LDParams

    @property
    def omega(self) -> float:
        return self.params.omega

    def bend(self, z):
        return self.omega * psi_cut(*BEND_CUT, np.abs(conformal_f(z)))

    def _bend_and_gradient(self, z):
        z = np.asarray(z, dtype=complex)
        f = conformal_f(z)
        fp = conformal_f_prime(z)
        r = np.abs(f)
        cut, cut1, _ = psi_cut_derivatives(*BEND_CUT, r)
        prod = np.conj(f) * fp / np.where(r > 0, r, 1.0)
        bend = self.omega * cut
        return bend, self.omega * cut1 * np.real(prod), -self.omega * cut1 * np.imag(prod)

    def immersion(self, z):
        z = np.asarray(z, dtype=complex)
        bend = self.bend(z)
        x, y = np.real(z), np.imag(z)
        return np.stack([x * np.cos(bend), y, x * np.sin(bend)], axis=-1)

    def tangents(self, z):
        z = np.asarray(z, dtype=complex)
        bend, bx, by = self._bend_and_gradient(z)
        x = np.real(z)
        c, s = np.cos(bend), np.sin(bend)
        zero, one = np.zeros_like(x), np.ones_like(x)
        Xx = np.stack([c - x * s * bx, zero, s + x * c * bx], axis=-1)
        Xy = np.stack([-x * s * by, one, x * c * by], axis=-1)
        return Xx, Xy

    def normal(self, z):
        Xx, Xy = self.tangents(z)
        return _unit(np.cross(Xx, Xy))

    def region(self, z):
        """1 near the diameter, 3 near p, 2 on the bending annulus."""
        r = np.abs(conformal_f(z))
        return np.where(r >= BEND_OUTER, 1, np.where(r <= BEND_INNER, 3, 2))

    def disk_chart(self, shape=DISK_GRID, s_min: Optional[float] = None) -> SurfaceChart:
        """The base surface in log-polar coordinates, world frame."""
        if s_min is None:
            s_min = math.log(0.5 * inner_radius(self.params))
        return SurfaceChart(
            name="base",
            u1=np.linspace(s_min, 0.0, shape[0]),
            u2=np.linspace(0.0, np.pi / 2, shape[1]),
            immersion=lambda S, Psi: self.immersion(disk_z(S, Psi)),
            edges=dict(_DISK_EDGES),
            orientation=-1,
            region="disk",
        )


def build_base(params_or_omega) -> BaseSurface:
    params = params_or_omega if isinstance(params_or_omega, LDParams) else construction_params(float(params_or_omega))
    return BaseSurface(params)


# --------------------------------------------------------------------------
# bridge


def bridge_half_length(params: LDParams) -> float:
    ratio = params.delta_prime / params.tau
    if ratio <= 1.0:
        raise BridgeTooLargeError(f"delta' = {params.delta_prime:.4g} does not exceed tau = {params.tau:.4g}")
    return math.acosh(ratio)


def bridge_lambda(t, tau: float):
    """Angle factor pulling the catenoid's theta = pi/2 line onto the sphere."""
    t = np.asarray(t, dtype=float)
    ch = np.cosh(t)
    arg = tau * (ch * ch + t * t) / (2.0 * ch)
    if np.any(np.abs(arg) > 1.0):
        raise BridgeTooLargeError(f"bridge leaves the ball: sphere-correction argument {float(np.max(arg)):.4g} > 1")
    out = 1.0 - (2.0 / np.pi) * np.arcsin(arg)
    return float(out) if out.ndim == 0 else out


def catenoid_point(t, theta, tau: float):
    """Catenoid of waist ``tau`` about the vertical line through p."""
    t = np.asarray(t, dtype=float)
    theta = np.asarray(theta, dtype=float)
    ch = np.cosh(t)
    return np.stack(
        np.broadcast_arrays(1.0 - tau * ch * np.cos(theta), tau * ch * np.sin(theta), tau * t), axis=-1
    )


def catenoid_normal(t, theta):
    """Upward unit normal of the catenoid."""
    t = np.asarray(t, dtype=float)
    theta = np.asarray(theta, dtype=float)
    sech = 1.0 / np.cosh(t)
    return np.stack(np.broadcast_arrays(sech * np.cos(theta), -sech * np.sin(theta), np.tanh(t)), axis=-1)


def bridge_point(t, theta, tau: float):
    return catenoid_point(t, bridge_lambda(t, tau) * np.asarray(theta), tau)


def bridge_normal(t, theta, tau: float):
    return catenoid_normal(t, bridge_lambda(t, tau) * np.asarray(theta))


def bridge_boundary_angle(t, tau: float):
    """Closed form of <X, nu> along the spherical edge of the bridge."""
    t = np.asarray(t, dtype=float)
    sech = 1.0 / np.cosh(t)
    return 0.5 * tau * t * t * sech * sech - 0.5 * tau + tau * t * np.tanh(t)


def bridge_coords(points, tau: float):
    """Invert the bridge parametrization for points on the catenoid."""
    points = np.asarray(points, dtype=float)
    t = points[..., 2] / tau
    theta = np.arctan2(points[..., 1], 1.0 - points[..., 0])
    return t, theta / bridge_lambda(t, tau)


_BRIDGE_EDGES = {"u1_lo": "planar-P", "u1_hi": "interior-overlap", "u2_lo": "symmetry", "u2_hi": "spherical"}
_DISK_EDGES = {"u1_lo": "interior-overlap", "u1_hi": "planar-P'", "u2_lo": "symmetry", "u2_hi": "spherical"}


def build_bridge(params: LDParams, shape=BRIDGE_GRID) -> SurfaceChart:
    """Half of the upper catenoid bridge, corrected to end on the sphere."""
    a = bridge_half_length(params)
    tau = params.tau
    bridge_lambda(np.linspace(0.0, a, 4 * shape[0]), tau)
    return SurfaceChart(
        name="bridge",
        u1=np.linspace(0.0, a, shape[0]),
        u2=np.linspace(0.0, np.pi / 2, shape[1]),
        immersion=lambda T, Th: bridge_point(T, Th, tau),
        edges=dict(_BRIDGE_EDGES),
        reflections={"u1_lo": _REFLECT_Z, "u2_lo": _REFLECT_Y},
        orientation=-1,
        region="bridge",
    )


# --------------------------------------------------------------------------
# disk part of the pre-initial surface


class DiskGraph:
    """Auxiliary-metric graph over the base surface in log-polar coordinates.

    The height is the linearized doubling solution with its bending and
    obstruction parts removed far from p, and the graph representative of
    the catenoid near p, glued across ``d_p in [2 delta', 3 delta']``.
    """

    def __init__(self, params: LDParams, base: BaseSurface):
        self.params = params
        self.base = base
        self.obstruction = ObstructionBasis(params)
        self.frame = rotation_about_axis(params.omega)
        dp = params.delta_prime
        self.glue_lo, self.glue_hi = 2.0 * dp, 3.0 * dp

    def phi_bar(self, z):
        value, _, _ = ld_eval(self.params, z)
        ob = self.obstruction
        return value - ob.v_hat(z) - self.params.mismatch * ob.v_bar(z)

    def catenoid_height(self, base_pts, normals, d):
        """Height along auxiliary normal geodesics at which they hit the catenoid."""
        tau = self.params.tau

        def miss(h):
            x = aux_exp(base_pts, normals, h, steps=GRAPH_STEPS)
            rho = np.hypot(x[..., 0] - 1.0, x[..., 1])
            return tau * np.arccosh(np.maximum(rho / tau, 1.0)) - x[..., 2]

        h0 = tau * np.arccosh(np.maximum(d / tau, 1.0 + 1e-12))
        h1 = h0 + 1e-4 * tau
        f0, f1 = miss(h0), miss(h1)
        for _ in range(CAT_ITERATIONS):
            den = f1 - f0
            live = np.abs(den) > 1e-300
            step = np.where(live, f1 * (h1 - h0) / np.where(live, den, 1.0), 0.0)
            h0, f0 = h1, f1
            h1 = h1 - step
            f1 = miss(h1)
        return h1

    def height(self, z, base_pts, normals):
        z = np.asarray(z, dtype=complex)
        d = np.abs(z - 1.0)
        # switches from 0 to 1 exactly across [glue_lo, glue_hi]
        width = self.glue_hi - self.glue_lo
        cut = psi_cut(self.glue_lo - width, self.glue_hi + width, d)
        out = np.zeros(z.shape)
        far = cut > 0
        if np.any(far):
            out[far] = cut[far] * self.phi_bar(z[far])
        near = cut < 1
        if np.any(near):
            out[near] += (1.0 - cut[near]) * self.catenoid_height(base_pts[near], normals[near], d[near])
        return out

    def world(self, S, Psi):
        z = disk_z(S, Psi)
        base_pts = self.base.immersion(z)
        normals = self.base.normal(z)
        h = self.height(z, base_pts, normals)
        return aux_exp(base_pts, normals, h, steps=GRAPH_STEPS)

    def __call__(self, S, Psi):
        return self.world(S, Psi) @ self.frame


def callable_normal(immersion, U1, U2, orientation: int, step: float = NORMAL_STEP):
    """Unit normal of a parametric map from 4th-order central differences."""
    w = (1.0 / 12.0, -2.0 / 3.0, 2.0 / 3.0, -1.0 / 12.0)
    offs = (-2, -1, 1, 2)
    X1 = sum(wk * immersion(U1 + k * step, U2) for wk, k in zip(w, offs)) / step
    X2 = sum(wk * immersion(U1, U2 + k * step) for wk, k in zip(w, offs)) / step
    return _unit(orientation * np.cross(X1, X2))


def _lagrange4(pos):
    """Cubic Lagrange weights at ``pos`` for nodes 0, 1, 2, 3."""
    pos = np.asarray(pos, dtype=float)
    out = np.empty(pos.shape + (4,))
    for j in range(4):
        wj = np.ones_like(pos)
        for m in range(4):
            if m != j:
                wj = wj * (pos - m) / (j - m)
        out[..., j] = wj
    return out


def _axis_stencil(coord, grid, mirror_lo: bool, mirror_hi: bool):
    n = len(grid)
    h = grid[1] - grid[0]
    pos = (np.asarray(coord, dtype=float) - grid[0]) / h
    start = np.floor(pos).astype(int) - 1
    if not mirror_lo:
        start = np.maximum(start, 0)
    if not mirror_hi:
        start = np.minimum(start, n - 4)
    weights = _lagrange4(pos - start)
    idx = start[..., None] + np.arange(4)
    idx = np.where(idx < 0, -idx, idx)
    idx = np.where(idx > n - 1, 2 * (n - 1) - idx, idx)
    if np.any(idx < 0) or np.any(idx > n - 1):
        raise ChartDegeneracyError("interpolation stencil leaves the chart")
    return idx, weights


@dataclass(frozen=True)
class OverlapMap:
    """Bicubic interpolation of even scalar fields from one chart onto an edge of another."""

    source: str
    target: str
    edge: str
    index: np.ndarray
    weights: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        flat = np.asarray(values).reshape(-1)
        return np.sum(flat[self.index] * self.weights, axis=-1)


def interpolation_map(source_chart: SurfaceChart, target: str, edge: str, c1, c2) -> OverlapMap:
    refl = source_chart.reflections
    i1, w1 = _axis_stencil(c1, source_chart.u1, "u1_lo" in refl, "u1_hi" in refl)
    i2, w2 = _axis_stencil(c2, source_chart.u2, "u2_lo" in refl, "u2_hi" in refl)
    n2 = source_chart.shape[1]
    index = (i1[:, :, None] * n2 + i2[:, None, :]).reshape(len(i1), 16)
    weights = (w1[:, :, None] * w2[:, None, :]).reshape(len(i1), 16)
    return OverlapMap(source_chart.name, target, edge, index, weights)


def invert_disk(graph: DiskGraph, world_pts, guess_s, guess_psi, iterations: int = INVERSE_ITERATIONS):
    """Gauss-Newton solve of ``graph.world(s, psi) = world_pts``."""
    s, psi = np.array(guess_s, dtype=float), np.array(guess_psi, dtype=float)
    eps = 1e-6
    for _ in range(iterations):
        X = graph.world(s, psi)
        Js = (graph.world(s + eps, psi) - graph.world(s - eps, psi)) / (2 * eps)
        Jp = (graph.world(s, psi + eps) - graph.world(s, psi - eps)) / (2 * eps)
        J = np.stack([Js, Jp], axis=-1)
        r = world_pts - X
        JtJ = np.einsum("...ia,...ib->...ab", J, J)
        Jtr = np.einsum("...ia,...i->...a", J, r)
        step = np.linalg.solve(JtJ, Jtr[..., None])[..., 0]
        s = s + step[..., 0]
        psi = psi + step[..., 1]
    residual = np.linalg.norm(graph.world(s, psi) - world_pts, axis=-1)
    return s, psi, residual


# --------------------------------------------------------------------------
# assembled surfaces


@dataclass
class ChartData:
    """Node arrays of one chart of an assembled surface (local frame)."""

    chart: SurfaceChart
    X: np.ndarray
    normal: np.ndarray
    base: np.ndarray
    rho: np.ndarray
    W: np.ndarray
    region: np.ndarray

    @property
    def shape(self):
        return self.chart.shape

    @property
    def size(self) -> int:
        return int(np.prod(self.chart.shape))

    def world(self) -> np.ndarray:
        return self.chart.to_world(self.X)

    def fields(self, check: bool = True):
        return grid_fields(self.X, self.chart, check=check)


_HERMITE = np.polynomial.hermite.hermgauss(16)


def _gauss_smooth(spline, x, width):
    """Gaussian average of ``spline`` around ``x`` with standard deviation ``width``."""
    nodes, weights = _HERMITE
    pts = x[..., None] + math.sqrt(2.0) * np.asarray(width)[..., None] * nodes
    return spline(pts) @ weights / math.sqrt(math.pi)


def _soft_min(a, b):
    total = a + b
    return np.where(total > 0, a * b / np.where(total > 0, total, 1.0), 0.0)


@dataclass
class BendingProfile:
    """Boundary angle of the pre-initial surface along its spherical edge.

    Near p the edge is a graph over |y| and the angle is tabulated against
    |y|, which extends it to a neighbourhood in space. Farther out the edge
    folds back in y where the base surface bends, so the disk chart's own
    edge coordinate s is used instead; the two are blended exactly
    across ``d_p in [blend_lo, blend_hi]`` of the base point.
    """

    theta_y: CubicSpline
    theta_s: CubicSpline
    collar_eps: float
    blend_lo: float
    blend_hi: float
    enabled: bool = True

    def edge_angle(self, points, s=None, base_z=None):
        """Edge angle carried inward, smoothed more the farther from the sphere."""
        points = np.asarray(points, dtype=float)
        y = np.abs(points[..., 1])
        depth = ANGLE_SMOOTHING * np.maximum(1.0 - np.linalg.norm(points, axis=-1), 0.0)
        ang = _gauss_smooth(self.theta_y, y, _soft_min(depth, y / 8.0))
        if s is not None:
            base_z = np.asarray(base_z, dtype=complex)
            zeta = conformal_f(base_z)
            stretch = np.abs(conformal_f_prime(zeta) * zeta)
            room = np.maximum(np.asarray(s) - self.theta_s.x[0], 0.0) / 8.0
            along = _gauss_smooth(self.theta_s, np.asarray(s, dtype=float), _soft_min(depth / stretch, room))
            width = self.blend_hi - self.blend_lo
            near = psi_cut(self.blend_hi + width, self.blend_lo - width, np.abs(base_z - 1.0))
            ang = near * ang + (1.0 - near) * along
        return ang

    def deformation(self, points, s=None, base_z=None):
        """Normal displacement making the surface orthogonal to the sphere."""
        points = np.asarray(points, dtype=float)
        if not self.enabled:
            return np.zeros(points.shape[:-1])
        r = np.linalg.norm(points, axis=-1)
        y = np.abs(points[..., 1])
        ang = self.edge_angle(points, s, base_z)
        root = np.sqrt(1.0 - ang * ang)
        sigma = (1.0 - r) / root
        scale = np.hypot(y, 1.0 - r)
        eps = self.collar_eps
        # switches exactly across sigma / scale in [eps / 4, eps / 2]
        cut = psi_cut(3.0 * eps / 4.0, 0.0, sigma / scale)
        return -sigma * (ang / root) * cut


@dataclass
class AssembledSurface:
    """A two-chart discretization of the fundamental piece."""

    params: LDParams
    stage: str
    charts: Dict[str, ChartData]
    overlaps: List[OverlapMap]
    base: BaseSurface
    graph: DiskGraph
    bending: Optional[BendingProfile] = None
    info: dict = field(default_factory=dict)

    @property
    def names(self):
        return list(self.charts)

    @property
    def size(self) -> int:
        return sum(c.size for c in self.charts.values())

    def offsets(self) -> Dict[str, int]:
        out, k = {}, 0
        for name, c in self.charts.items():
            out[name] = k
            k += c.size
        return out

    def split(self, vec) -> Dict[str, np.ndarray]:
        vec = np.asarray(vec, dtype=float)
        out = {}
        for name, off in self.offsets().items():
            c = self.charts[name]
            out[name] = vec[off:off + c.size].reshape(c.shape)
        return out

    def join(self, fields: Dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([np.asarray(fields[n], dtype=float).reshape(-1) for n in self.charts])

    def stacked(self, attr: str) -> np.ndarray:
        return self.join({n: getattr(c, attr) for n, c in self.charts.items()})

    def with_charts(self, charts: Dict[str, ChartData], stage: str) -> "AssembledSurface":
        return replace(self, charts=charts, stage=stage)


def _rho(points_world):
    return np.hypot(points_world[..., 0] - 1.0, points_world[..., 1])


def _bridge_base(points_world):
    """Base point on the plane of the auxiliary normal geodesic through each point.

    Exact where the metric is |dx|^2/|x|^2; elsewhere the radial rescale is
    only a bookkeeping approximation, used where the obstruction field vanishes.
    """
    planar = points_world[..., 0] + 1j * points_world[..., 1]
    r = np.linalg.norm(points_world, axis=-1)
    return planar * (r / np.maximum(np.abs(planar), 1e-300))


def _chart_data(chart, X, normal, base_z, obstruction: ObstructionBasis, glue_hi: float):
    world = chart.to_world(X)
    rho = _rho(world)
    W = obstruction.w(base_z)
    if chart.region == "bridge":
        region = np.full(chart.shape, REGION_CODES["bridge"])
    else:
        d = np.abs(base_z - 1.0)
        region = np.where(d < glue_hi, REGION_CODES["gluing"], REGION_CODES["disk"])
    return ChartData(chart, X, normal, base_z, rho, W, region)


def build_pre_initial(params: LDParams, zeta: Optional[float] = None, bridge_grid=BRIDGE_GRID, disk_grid=DISK_GRID) -> AssembledSurface:
    """Glue the bridge to the auxiliary graph over the base surface."""
    if zeta is not None and abs(zeta - params.zeta) > 1e-15:
        params = with_zeta(params, zeta)
    dp = params.delta_prime
    tau = params.tau
    if 1.0 - 3.0 * dp < CONE_SHELL:
        raise SlidingDomainError(
            f"gluing annulus reaches |q| = {1.0 - 3.0 * dp:.4f} inside the curved part of the "
            f"auxiliary metric (needs >= {CONE_SHELL:.4f}); use a larger bridge radius exponent"
        )
    r_in = inner_radius(params)
    if r_in > 0.8 * dp:
        raise SlidingDomainError(
            f"bridge waist {tau:.4g} too large for delta' = {dp:.4g}: no room for the chart overlap"
        )
    base = build_base(params)
    graph = DiskGraph(params, base)
    bridge = build_bridge(params, bridge_grid)

    s_min = math.log(0.5 * r_in)

    disk = SurfaceChart(
        name="disk",
        u1=np.linspace(s_min, 0.0, disk_grid[0]),
        u2=np.linspace(0.0, np.pi / 2, disk_grid[1]),
        immersion=graph,
        edges=dict(_DISK_EDGES),
        reflections={"u1_hi": _REFLECT_X, "u2_lo": _REFLECT_Y},
        orientation=-1,
        frame=graph.frame,
        region="disk",
    )

    T, Th = bridge.mesh()
    Xb = bridge_point(T, Th, tau)
    Nb = bridge_normal(T, Th, tau)
    S, Psi = disk.mesh()
    Xd = graph(S, Psi)
    Nd = callable_normal(graph, S, Psi, -1)
    zd = disk_z(S, Psi)

    ob = graph.obstruction
    charts = {
        "bridge": _chart_data(bridge, Xb, Nb, _bridge_base(Xb), ob, graph.glue_hi),
        "disk": _chart_data(disk, Xd, Nd, zd, ob, graph.glue_hi),
    }

    # disk overlap edge -> bridge coordinates (closed form on the catenoid)
    edge_world = disk.to_world(Xd[0])
    tb, thb = bridge_coords(edge_world, tau)
    to_disk_edge = interpolation_map(bridge, "disk", "u1_lo", tb, thb)

    # bridge overlap edge -> disk coordinates (Gauss-Newton)
    target = Xb[-1]
    q0 = _bridge_base(target)
    s0, p0 = disk_coords(q0)
    sb, pb, inv_res = invert_disk(graph, target, s0, p0)
    to_bridge_edge = interpolation_map(disk, "bridge", "u1_hi", sb, pb)

    # collar consistency: disk nodes on the pure-catenoid part lie on the bridge
    collar = np.abs(zd - 1.0) <= graph.glue_lo
    cw = disk.to_world(Xd[collar])
    tc, thc = bridge_coords(cw, tau)
    inside = (tc <= bridge.u1[-1]) & (thc <= np.pi / 2)
    gap = np.linalg.norm(bridge_point(tc, thc, tau) - cw, axis=-1)
    info = {
        "bridge_half_length": bridge.u1[-1],
        "lambda_range": [float(np.min(bridge_lambda(bridge.u1, tau))), float(bridge_lambda(0.0, tau))],
        "collar_gap": float(np.max(gap)) if gap.size else 0.0,
        "collar_points": int(np.sum(inside)),
        "edge_inverse_residual": float(np.max(inv_res)),
        "disk_s_min": s_min,
    }
    return AssembledSurface(params, "pre-initial", charts, [to_disk_edge, to_bridge_edge], base, graph, None, info)


# --------------------------------------------------------------------------
# bending to orthogonality


def _boundary_profile(surface: AssembledSurface, samples: int = 4):
    """Boundary angle samples: against |y| near p and against s on the disk edge."""
    params = surface.params
    tau = params.tau
    dp = params.delta_prime
    bridge = surface.charts["bridge"].chart
    disk = surface.charts["disk"].chart

    tb = np.linspace(bridge.u1[0], bridge.u1[-1], samples * (len(bridge.u1) - 1) + 1)
    yb = bridge_point(tb, np.pi / 2, tau)[..., 1]
    thb = bridge_boundary_angle(tb, tau)

    sd = np.linspace(disk.u1[0], disk.u1[-1], samples * (len(disk.u1) - 1) + 1)
    psi = np.full_like(sd, np.pi / 2)
    Xd = surface.graph(sd, psi)
    Nd = callable_normal(surface.graph, sd, psi, -1)
    yd = Xd[..., 1]
    thd = _dot(Xd, Nd)
    dd = np.abs(disk_z(sd, psi) - 1.0)

    # hand over inside the chart overlap
    rho_switch = math.sqrt(inner_radius(params) * dp)
    y_switch = float(bridge_point(math.acosh(rho_switch / tau), np.pi / 2, tau)[1])
    keep_b = yb <= y_switch
    keep_d = (yd > y_switch) & (dd <= BLEND_REACH * dp)
    by_y = (np.concatenate([yb[keep_b], yd[keep_d]]), np.concatenate([thb[keep_b], thd[keep_d]]))
    # mirror across s = 0 so the profile is even there
    by_s = (np.concatenate([sd, -sd[-2::-1]]), np.concatenate([thd, thd[-2::-1]]))
    return by_y, by_s


def bend_to_orthogonal(surface: AssembledSurface, collar_eps: float = COLLAR_EPS, enabled: bool = True) -> AssembledSurface:
    """Deform along the normal near the sphere so the surface meets it orthogonally."""
    if not 0.0 < collar_eps <= MAX_COLLAR_EPS:
        raise CollarError(f"collar width {collar_eps} outside (0, {MAX_COLLAR_EPS}]")
    (y, theta), (s_edge, theta_s) = _boundary_profile(surface)
    if np.any(np.diff(y) <= 0):
        raise CollarError("spherical edge near the bridge is not a graph over |y|; collar coordinates fail")
    worst = float(max(np.max(np.abs(theta)), np.max(np.abs(theta_s))))
    if worst >= 0.5:
        raise CollarError(f"boundary angle {worst:.3g} too large for the collar")
    dp = surface.params.delta_prime
    profile = BendingProfile(
        CubicSpline(y, theta), CubicSpline(s_edge, theta_s), collar_eps, BLEND_LO * dp, BLEND_HI * dp, enabled
    )

    tau = surface.params.tau
    graph = surface.graph
    charts = {}
    for name, cd in surface.charts.items():
        chart = cd.chart
        if name == "bridge":

            def immersion(U1, U2, tau=tau):
                X = bridge_point(U1, U2, tau)
                u = profile.deformation(X)
                return X + u[..., None] * bridge_normal(U1, U2, tau)

            u_nodes = profile.deformation(cd.X)
        else:

            def immersion(U1, U2):
                X = graph(U1, U2)
                u = profile.deformation(X, U1, disk_z(U1, U2))
                out = X.copy()
                live = u != 0
                if np.any(live):
                    nrm = callable_normal(graph, U1[live], U2[live], -1)
                    out[live] = X[live] + u[live][..., None] * nrm
                return out

            U1, _ = chart.mesh()
            u_nodes = profile.deformation(cd.X, U1, cd.base)
        X = cd.X + u_nodes[..., None] * cd.normal
        U1, U2 = chart.mesh()
        normal = callable_normal(immersion, U1, U2, chart.orientation)
        charts[name] = replace(cd, chart=replace(chart, immersion=immersion), X=X, normal=normal)
    out = surface.with_charts(charts, "initial")
    out.bending = profile
    out.info = dict(surface.info)
    out.info["collar_eps"] = collar_eps
    out.info["bending_enabled"] = enabled
    out.info["max_deformation"] = float(max(np.max(np.abs(c.X - surface.charts[n].X)) for n, c in charts.items()))
    return out


# --------------------------------------------------------------------------
# perturbations


def perturb(surface: AssembledSurface, phi, margin: float = PERTURB_MARGIN, steps: int = PERTURB_STEPS) -> AssembledSurface:
    """Auxiliary-metric graph of ``phi`` times the unit normal.

    ``phi`` is a flat vector over the stacked chart nodes or a dict of node
    arrays. Normals of the result come from the grid.
    """
    fields = phi if isinstance(phi, dict) else surface.split(phi)
    charts = {}
    for name, cd in surface.charts.items():
        values = np.asarray(fields[name], dtype=float)
        X = perturb_nodes(cd, values, margin, steps)
        charts[name] = replace(cd, X=X)
    out = surface.with_charts(charts, "perturbed")
    for name, cd in out.charts.items():
        cd.normal = grid_fields(cd.X, cd.chart, check=False).normal
    return out


def perturb_nodes(cd: ChartData, values, margin: float = PERTURB_MARGIN, steps: int = PERTURB_STEPS):
    world = cd.chart.to_world(cd.X)
    nrm = cd.chart.to_world(cd.normal)
    moved = aux_exp(world, nrm, values, margin=margin, steps=steps)
    return cd.chart.to_local(moved)


def build_initial(params: LDParams, bridge_grid=BRIDGE_GRID, disk_grid=DISK_GRID, collar_eps: float = COLLAR_EPS, bend: bool = True) -> AssembledSurface:
    return bend_to_orthogonal(build_pre_initial(params, bridge_grid=bridge_grid, disk_grid=disk_grid), collar_eps, bend)
