"""Discrete linearized mean-curvature problem on an assembled surface.

Sign convention: with ``A_ab = -<X_ab, nu>`` a normal perturbation by
``u`` changes the mean curvature by ``-(Delta + |A|^2) u`` to first order,
and the boundary angle ``<X, nu>`` by ``-d_eta u + u``. The Jacobian
below is that of the discrete residual

    [rho^2 (H - mu W)  on interior and mirror-edge nodes,
     <X, nu>           on spherical-edge nodes,
     u - I(u)          on overlap-edge nodes (interpolation from the other chart),
     <g, u>            gauge]

so the linear problem ``L u = E + mu W`` with Robin data ``B u = E_b`` reads
``J [u, -mu] = [-rho^2 E, E_b, 0, 0]``: the multiplier of the nonlinear
residual enters with the opposite sign.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fd
from .cutoffs import weighted_norm
from .errors import ConditioningError
from .geometry import EDGES, GridStencil, grid_fields
from .ld import LDParams, ObstructionBasis, conformal_f, conformal_f_prime
from .surface import PERTURB_MARGIN, PERTURB_STEPS, REGION_CODES, AssembledSurface, perturb_nodes

GAMMA = 0.5
CONDITION_LIMIT = 1e13
DIFF_STEP = 1e-6
# one-sided second-derivative stencils reach five nodes, so a period of six
# keeps same-colour nodes out of each other's stencils
COLOR_PERIOD = 6
# least fill on the bordered grid systems among SuperLU's orderings
COLUMN_ORDER = "MMD_ATA"

INTERIOR, SPHERICAL, OVERLAP = 0, 1, 2


def row_kinds(chart) -> np.ndarray:
    """Row type of every node: interior, spherical edge or overlap edge."""
    kinds = np.full(chart.shape, INTERIOR, dtype=np.int8)
    for tag, code in (("spherical", SPHERICAL), ("interior-overlap", OVERLAP)):
        for edge in EDGES:
            if chart.edges.get(edge) == tag:
                kinds[chart.edge_index(edge)] = code
    return kinds


def scalar_operators(chart) -> Dict[str, sp.csr_matrix]:
    """Sparse difference operators for scalar fields even under the chart mirrors."""
    stencil = GridStencil.for_chart(chart)

    def parity(lo, hi):
        return (1.0 if lo in chart.reflections else None, 1.0 if hi in chart.reflections else None)

    return stencil.scalar_operators(parity("u1_lo", "u1_hi"), parity("u2_lo", "u2_hi"))


def laplace_beltrami(fields, ops) -> sp.csr_matrix:
    inv = fields.metric_inv.reshape(-1, 2, 2)
    gam = np.einsum("nab,ncab->nc", inv, fields.christoffel.reshape(-1, 2, 2, 2))
    diag = sp.diags
    return (
        diag(inv[:, 0, 0]) @ ops["11"]
        + diag(2.0 * inv[:, 0, 1]) @ ops["12"]
        + diag(inv[:, 1, 1]) @ ops["22"]
        - diag(gam[:, 0]) @ ops["1"]
        - diag(gam[:, 1]) @ ops["2"]
    ).tocsr()


def conormal_derivative(fields, ops, edge: str) -> sp.csr_matrix:
    """Outward conormal derivative at every node, for use on ``edge``."""
    axis = 0 if edge.startswith("u1") else 1
    sign = 1.0 if edge.endswith("hi") else -1.0
    inv = fields.metric_inv.reshape(-1, 2, 2)
    scale = sign / np.sqrt(inv[:, axis, axis])
    return (sp.diags(scale * inv[:, axis, 0]) @ ops["1"] + sp.diags(scale * inv[:, axis, 1]) @ ops["2"]).tocsr()


def overlap_matrix(surface: AssembledSurface) -> sp.csr_matrix:
    """``u - I(u)`` on overlap-edge rows, zero elsewhere."""
    offs = surface.offsets()
    n = surface.size
    rows, cols, vals = [], [], []
    for ov in surface.overlaps:
        tgt = surface.charts[ov.target]
        idx = np.arange(tgt.size).reshape(tgt.shape)[tgt.chart.edge_index(ov.edge)]
        r = offs[ov.target] + idx
        rows.append(r)
        cols.append(r)
        vals.append(np.ones(len(r)))
        rows.append(np.repeat(r, ov.index.shape[1]))
        cols.append((offs[ov.source] + ov.index).reshape(-1))
        vals.append(-ov.weights.reshape(-1))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def gauge_weights(surface: AssembledSurface) -> np.ndarray:
    """Area-weighted samples of the obstruction field, unit Euclidean length."""
    parts = []
    for cd in surface.charts.values():
        area = cd.fields(check=False).area_density * cd.chart.h1 * cd.chart.h2
        parts.append((area * cd.W).reshape(-1))
    g = np.concatenate(parts)
    norm = np.linalg.norm(g)
    if norm == 0.0:
        raise ConditioningError("obstruction field vanishes on every node; the gauge row is empty", math.inf)
    return g / norm


@dataclass
class DiscreteSystem:
    """Square sparse system for the node values and the obstruction coefficient."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    kinds: np.ndarray
    row_scale: np.ndarray
    obstruction: np.ndarray
    gauge: np.ndarray
    offsets: Dict[str, int]
    mode: str

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


@dataclass
class SolveResult:
    u: np.ndarray
    mu: float
    fields: Dict[str, np.ndarray]
    weighted_residual: float
    boundary_residual: float
    overlap_residual: float
    gauge_residual: float
    condition: float
    regions: Dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "mu": self.mu,
            "weighted_residual": self.weighted_residual,
            "boundary_residual": self.boundary_residual,
            "overlap_residual": self.overlap_residual,
            "gauge_residual": self.gauge_residual,
            "condition": self.condition,
            "regions": dict(self.regions),
            "max_abs_u": float(np.max(np.abs(self.u))) if self.u.size else 0.0,
        }


# --------------------------------------------------------------------------
# nonlinear residual and its Jacobian


class ResidualMap:
    """Discrete residual of perturbations ``phi`` of a fixed assembled surface."""

    def __init__(self, surface: AssembledSurface, margin: float = PERTURB_MARGIN, steps: int = PERTURB_STEPS):
        self.surface = surface
        self.margin = margin
        self.steps = steps
        self.offsets = surface.offsets()
        self.n = surface.size
        self.kinds = {name: row_kinds(cd.chart) for name, cd in surface.charts.items()}
        self.ops = {name: scalar_operators(cd.chart) for name, cd in surface.charts.items()}
        self.overlap = overlap_matrix(surface)
        self.gauge = gauge_weights(surface)
        self.rho2 = surface.join({n: cd.rho**2 for n, cd in surface.charts.items()})
        self.W = surface.stacked("W")
        self.kind_vec = surface.join({n: k for n, k in self.kinds.items()}).astype(np.int8)

    def perturbed(self, phi) -> Dict[str, np.ndarray]:
        fields = self.surface.split(phi)
        out = {}
        for name, cd in self.surface.charts.items():
            vals = fields[name]
            out[name] = perturb_nodes(cd, vals, self.margin, self.steps) if np.any(vals) else cd.X
        return out

    def geometry(self, phi):
        return {name: grid_fields(X, self.surface.charts[name].chart, check=False) for name, X in self.perturbed(phi).items()}

    def node_rows(self, phi, mu: float) -> np.ndarray:
        """Mean curvature and boundary angle rows (overlap rows left at zero)."""
        parts = []
        for name, F in self.geometry(phi).items():
            cd = self.surface.charts[name]
            kind = self.kinds[name]
            theta = F.boundary_angle()
            r = np.where(kind == INTERIOR, cd.rho**2 * (F.mean_curvature - mu * cd.W), 0.0)
            r = np.where(kind == SPHERICAL, theta, r)
            parts.append(r.reshape(-1))
        return np.concatenate(parts)

    def __call__(self, phi, mu: float) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        out = np.empty(self.n + 1)
        out[: self.n] = self.node_rows(phi, mu) + self.overlap @ phi
        out[self.n] = self.gauge @ phi
        return out

    def _patterns(self):
        pats = {}
        for name, ops in self.ops.items():
            P = sum(abs(ops[k]) for k in ("1", "2", "11", "12", "22"))
            P = (P + sp.identity(P.shape[0], format="csr")).tocsc()
            pats[name] = P
        return pats

    def jacobian(self, phi=None, mu: float = 0.0, step: float = DIFF_STEP) -> sp.csr_matrix:
        """Jacobian by central differences over a node colouring."""
        phi = np.zeros(self.n) if phi is None else np.asarray(phi, dtype=float)
        pats = self._patterns()
        rows, cols, vals = [], [], []
        rho = np.sqrt(self.rho2)
        for c1 in range(COLOR_PERIOD):
            for c2 in range(COLOR_PERIOD):
                masks = {}
                delta = np.zeros(self.n)
                for name, cd in self.surface.charts.items():
                    I, J = np.indices(cd.shape)
                    m = ((I % COLOR_PERIOD == c1) & (J % COLOR_PERIOD == c2)).reshape(-1)
                    masks[name] = m
                    off = self.offsets[name]
                    delta[off:off + cd.size][m] = step * rho[off:off + cd.size][m]
                diff = self.node_rows(phi + delta, mu) - self.node_rows(phi - delta, mu)
                for name, cd in self.surface.charts.items():
                    off = self.offsets[name]
                    local_cols = np.flatnonzero(masks[name])
                    sub = pats[name][:, local_cols].tocsr()
                    counts = np.diff(sub.indptr)
                    if np.any(counts > 1):
                        raise RuntimeError("colouring too coarse for the difference stencils")
                    keep = np.flatnonzero((counts == 1) & (self.kinds[name].reshape(-1) != OVERLAP))
                    col = local_cols[sub.indices[sub.indptr[keep]]]
                    rows.append(off + keep)
                    cols.append(off + col)
                    vals.append(diff[off + keep] / (2.0 * delta[off + col]))
        node = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(self.n, self.n))
        return self._border(node + self.overlap)

    def analytic_jacobian(self, phi=None) -> sp.csr_matrix:
        """Jacobian from the continuum linearization on the grid.

        With ``phi`` the operator is taken on the perturbed surface and
        applied to the normal component of the displacement direction.
        """
        phi = np.zeros(self.n) if phi is None else np.asarray(phi, dtype=float)
        geoms = self.geometry(phi)
        velocity = self._displacement_velocity(phi)
        blocks = []
        for name, cd in self.surface.charts.items():
            F = geoms[name]
            ops = self.ops[name]
            kind = self.kinds[name].reshape(-1)
            V = velocity[name].reshape(-1, 3)
            inv = F.metric_inv.reshape(-1, 2, 2)
            tangents = np.stack([F.X1.reshape(-1, 3), F.X2.reshape(-1, 3)], axis=1)
            # normal speed and tangential coordinates of the node displacement
            a = sp.diags(np.einsum("ni,ni->n", V, F.normal.reshape(-1, 3)))
            T = np.einsum("nab,nbi,ni->na", inv, tangents, V)
            H = F.mean_curvature.reshape(-1)
            drift = T[:, 0] * (ops["1"] @ H) + T[:, 1] * (ops["2"] @ H)
            lin_h = -(laplace_beltrami(F, ops) + sp.diags(F.second_form_sq.reshape(-1))) @ a + sp.diags(drift)
            jac = sp.diags((cd.rho**2).reshape(-1)) @ lin_h
            # <X, nu> moves with the normal part, the slope of u along X and the turning normal
            X = F.X.reshape(-1, 3)
            c = np.einsum("nab,nbi,ni->na", inv, tangents, X)
            A = F.second_form.reshape(-1, 2, 2)
            turn = np.einsum("na,nab,nb->n", T, A, c)
            slope = sp.diags(c[:, 0]) @ ops["1"] + sp.diags(c[:, 1]) @ ops["2"]
            angle = (sp.identity(cd.size, format="csr") - slope) @ a + sp.diags(turn)
            select = lambda code: sp.diags((kind == code).astype(float))
            blocks.append((select(INTERIOR) @ jac + select(SPHERICAL) @ angle).tocsr())
        return self._border(sp.block_diag(blocks, format="csr") + self.overlap)

    def _displacement_velocity(self, phi, step: float = DIFF_STEP) -> Dict[str, np.ndarray]:
        """Derivative of every node position with respect to its own value of ``phi``."""
        fields = self.surface.split(phi)
        out = {}
        for name, cd in self.surface.charts.items():
            vals = fields[name]
            if not np.any(vals):
                out[name] = cd.normal
                continue
            hi = perturb_nodes(cd, vals + step, self.margin, self.steps)
            lo = perturb_nodes(cd, vals - step, self.margin, self.steps)
            out[name] = (hi - lo) / (2.0 * step)
        return out

    def _border(self, node: sp.csr_matrix) -> sp.csr_matrix:
        col = -np.where(self.kind_vec == INTERIOR, self.rho2 * self.W, 0.0)
        top = sp.hstack([node, sp.csr_matrix(col[:, None])])
        bottom = sp.hstack([sp.csr_matrix(self.gauge[None, :]), sp.csr_matrix((1, 1))])
        return sp.vstack([top, bottom], format="csr")


def assemble(surface: AssembledSurface, linearization: str = "analytic", residual_map: Optional[ResidualMap] = None, phi=None, mu: float = 0.0) -> DiscreteSystem:
    """Discrete linearized operator with obstruction column and gauge row."""
    rmap = residual_map or ResidualMap(surface)
    if linearization == "analytic":
        mat = rmap.analytic_jacobian()
    elif linearization == "differenced":
        mat = rmap.jacobian(phi, mu)
    else:
        raise ValueError(f"unknown linearization {linearization!r}")
    scale = np.where(rmap.kind_vec == INTERIOR, rmap.rho2, 1.0)
    return DiscreteSystem(mat, np.zeros(rmap.n + 1), rmap.kind_vec, scale, rmap.W, rmap.gauge, rmap.offsets, linearization)


def condition_estimate(matrix: sp.spmatrix, lu=None) -> float:
    """One-norm condition number estimate from an LU factorization."""
    lu = lu or spla.splu(matrix.tocsc(), permc_spec=COLUMN_ORDER)
    n = matrix.shape[0]
    inv = spla.LinearOperator((n, n), matvec=lu.solve, rmatvec=lambda x: lu.solve(x, trans="T"), dtype=float)
    return float(spla.onenormest(matrix) * spla.onenormest(inv))


def factorize(matrix: sp.spmatrix, limit: Optional[float] = CONDITION_LIMIT):
    """LU factors and condition estimate; ``limit=None`` skips the estimate."""
    try:
        lu = spla.splu(matrix.tocsc(), permc_spec=COLUMN_ORDER)
    except RuntimeError as exc:
        raise ConditioningError(f"sparse factorization failed: {exc}", math.inf) from exc
    if limit is None:
        return lu, math.nan
    cond = condition_estimate(matrix, lu)
    if not np.isfinite(cond) or cond > limit:
        raise ConditioningError(f"condition estimate {cond:.3g} exceeds {limit:.3g}", cond)
    return lu, cond


def _region_table(surface: AssembledSurface, values: np.ndarray) -> Dict[str, float]:
    region = surface.stacked("region")
    out = {}
    for name, code in REGION_CODES.items():
        sel = region == code
        out[name] = float(np.max(np.abs(values[sel]))) if np.any(sel) else 0.0
    return out


def solve_linearized(surface: AssembledSurface, E=None, E_boundary=None, system: Optional[DiscreteSystem] = None, limit: float = CONDITION_LIMIT) -> SolveResult:
    """Solve ``L u = E + mu W`` with Robin data on spherical edges.

    ``E`` and ``E_boundary`` are stacked node vectors (or dicts of node
    arrays); only their interior and spherical-edge entries are used.
    """
    system = system or assemble(surface)
    n = system.size - 1
    E = _stacked(surface, E)
    Eb = _stacked(surface, E_boundary)
    rhs = np.zeros(n + 1)
    interior = system.kinds == INTERIOR
    spherical = system.kinds == SPHERICAL
    rhs[:n][interior] = -system.row_scale[interior] * E[interior]
    rhs[:n][spherical] = Eb[spherical]
    lu, cond = factorize(system.matrix, limit)
    sol = lu.solve(rhs)
    u, mu = sol[:n], -float(sol[n])
    resid = system.matrix @ sol - rhs
    weighted = np.zeros(n)
    rho = np.sqrt(np.where(interior, system.row_scale, 1.0))
    weighted[interior] = resid[:n][interior] / system.row_scale[interior]
    wres = weighted_norm([weighted[interior]], rho[interior], GAMMA - 2.0) if np.any(interior) else 0.0
    return SolveResult(
        u=u,
        mu=mu,
        fields=surface.split(u),
        weighted_residual=wres,
        boundary_residual=float(np.max(np.abs(resid[:n][spherical]))) if np.any(spherical) else 0.0,
        overlap_residual=float(np.max(np.abs(resid[:n][system.kinds == OVERLAP]))) if np.any(system.kinds == OVERLAP) else 0.0,
        gauge_residual=float(abs(resid[n])),
        condition=cond,
        regions=_region_table(surface, np.where(interior, resid[:n], 0.0)),
    )


def _stacked(surface, values):
    if values is None:
        return np.zeros(surface.size)
    if isinstance(values, dict):
        return surface.join(values)
    values = np.asarray(values, dtype=float)
    if values.ndim == 0:
        return np.full(surface.size, float(values))
    return values.reshape(-1)


# --------------------------------------------------------------------------
# model problems


def _second_derivative(n: int, h: float, accuracy: int) -> np.ndarray:
    """Dense second-derivative matrix of the given even accuracy, one-sided near the ends."""
    half = accuracy // 2
    size = accuracy + 2
    out = np.zeros((n, n))
    for i in range(n):
        if half <= i < n - half:
            offs = tuple(range(-half, half + 1))
        else:
            start = min(max(i - half, 0), n - size)
            offs = tuple(range(start - i, start - i + size))
        for o, w in zip(offs, fd.stencil_weights(offs, 2)):
            out[i, i + o] = w / h**2
    return out


def model_cat_apply(u, t, theta, accuracy: int = 6) -> np.ndarray:
    """``u_tt + u_theta theta + 2 sech^2(t) u`` by central differences."""
    t = np.asarray(t, dtype=float)
    theta = np.asarray(theta, dtype=float)
    u = np.asarray(u, dtype=float)
    Dtt = _second_derivative(len(t), float(t[1] - t[0]), accuracy)
    Dqq = _second_derivative(len(theta), float(theta[1] - theta[0]), accuracy)
    sech2 = 1.0 / np.cosh(t) ** 2
    return fd.apply_axis(Dtt, u, 0) + fd.apply_axis(Dqq, u, 1) + 2.0 * sech2[:, None] * u


@dataclass
class ModelSolution:
    u: np.ndarray
    mu: float
    residual: float
    coords: tuple
    condition: float


def _solve_checked(A: sp.spmatrix, b: np.ndarray, limit: float):
    lu, cond = factorize(A, limit)
    x = lu.solve(b)
    return x, float(np.max(np.abs(A @ x - b))), cond


def solve_model(domain: str, E, E_boundary=None, grid=None, limit: float = CONDITION_LIMIT, **kw) -> ModelSolution:
    """Model problems on the half-catenoid and the flat half-disk.

    ``E`` and ``E_boundary`` are callables of the model coordinates:
    ``(t, theta)`` on the half-catenoid, ``(s, psi)`` on the half-disk
    where ``f(z) = exp(s - i psi)``.
    """
    if domain == "half_catenoid":
        return _solve_half_catenoid(E, E_boundary, grid or (257, 101), kw.get("length", 4.0), limit)
    if domain == "half_disk":
        return _solve_half_disk(E, E_boundary, grid or (513, 65), kw.get("s_min", -8.0), kw.get("params"), kw.get("support_radius"), limit)
    raise ValueError(f"unknown model domain {domain!r}")


def _solve_half_catenoid(E, Eb, grid, length, limit):
    """``L_cat u = E`` on [-T, T] x [-pi/2, pi/2]: conormal data on the theta edges, u = 0 at t = +-T."""
    n1, n2 = grid
    t = np.linspace(-length, length, n1)
    th = np.linspace(-np.pi / 2, np.pi / 2, n2)
    T, TH = np.meshgrid(t, th, indexing="ij")
    Dt2 = sp.csr_matrix(fd.diff_matrix(n1, t[1] - t[0], 2))
    Dq1 = sp.csr_matrix(fd.diff_matrix(n2, th[1] - th[0], 1))
    Dq2 = sp.csr_matrix(fd.diff_matrix(n2, th[1] - th[0], 2))
    I1, I2 = sp.identity(n1), sp.identity(n2)
    L = sp.kron(Dt2, I2) + sp.kron(I1, Dq2) + sp.diags((2.0 / np.cosh(T) ** 2).reshape(-1))
    sgn = np.sign(TH)
    conormal = -sp.diags(sgn.reshape(-1)) @ sp.kron(I1, Dq1)
    rhs = np.asarray(E(T, TH), dtype=float).reshape(-1)
    bdata = np.zeros_like(T) if Eb is None else np.asarray(Eb(T, TH), dtype=float) * np.ones_like(T)
    theta_edge = np.zeros(T.shape, dtype=bool)
    theta_edge[:, [0, -1]] = True
    t_edge = np.zeros(T.shape, dtype=bool)
    t_edge[[0, -1], :] = True
    theta_edge &= ~t_edge
    rows = sp.diags((~(theta_edge | t_edge)).reshape(-1).astype(float)) @ L
    rows = rows + sp.diags(theta_edge.reshape(-1).astype(float)) @ conormal
    rows = rows + sp.diags(t_edge.reshape(-1).astype(float))
    rhs = np.where(theta_edge.reshape(-1), bdata.reshape(-1), rhs)
    rhs = np.where(t_edge.reshape(-1), 0.0, rhs)
    x, res, cond = _solve_checked(rows.tocsr(), rhs, limit)
    return ModelSolution(x.reshape(T.shape), 0.0, res, (t, th), cond)


def _solve_half_disk(E, Eb, grid, s_min, params, support_radius, limit):
    """``Delta u = E + mu w`` on the flat half-disk with ``-d_eta u + u = E_b`` on the arc.

    Coordinates ``(s, psi)`` with ``f(z) = exp(s - i psi)``: the arc is
    ``psi = pi/2`` (mirror at ``psi = 0``), the diameter is ``s = 0`` where
    the Neumann condition is an even reflection, and ``s = s_min`` is a
    small circle around p carrying ``d_s u = 0``.
    """
    n1, n2 = grid
    s = np.linspace(s_min, 0.0, n1)
    psi = np.linspace(0.0, np.pi / 2, n2)
    S, P = np.meshgrid(s, psi, indexing="ij")
    zeta = np.exp(S - 1j * P)
    z = conformal_f(zeta)
    c2 = (np.abs(conformal_f_prime(zeta)) * np.abs(zeta)) ** 2
    params = params or LDParams(omega=0.1, zeta=0.0, tau=0.02, tau_bar=0.02)
    if support_radius is not None:
        params = replace(params, delta_obs=support_radius)
    w = ObstructionBasis(params).w(z)
    h1, h2 = s[1] - s[0], psi[1] - psi[0]
    D1 = sp.csr_matrix(fd.diff_matrix(n1, h1, 1, 0, 0))
    D11 = sp.csr_matrix(fd.diff_matrix(n1, h1, 2, 0, fd.GHOSTS) @ fd.fold_matrix(n1, None, 1.0))
    D21 = sp.csr_matrix(fd.diff_matrix(n2, h2, 1, fd.GHOSTS, 0) @ fd.fold_matrix(n2, 1.0, None))
    D22 = sp.csr_matrix(fd.diff_matrix(n2, h2, 2, fd.GHOSTS, 0) @ fd.fold_matrix(n2, 1.0, None))
    I1, I2 = sp.identity(n1), sp.identity(n2)
    lap = sp.kron(D11, I2) + sp.kron(I1, D22)
    robin = sp.identity(n1 * n2) - sp.diags(1.0 / np.sqrt(c2).reshape(-1)) @ sp.kron(I1, D21)
    neumann = sp.kron(D1, I2)
    arc = np.zeros(S.shape, dtype=bool)
    arc[:, -1] = True
    inner = np.zeros(S.shape, dtype=bool)
    inner[0, :] = True
    arc &= ~inner
    interior = ~(arc | inner)
    sel = lambda m: sp.diags(m.reshape(-1).astype(float))
    node = sel(interior) @ lap + sel(arc) @ robin + sel(inner) @ neumann
    col = -np.where(interior, c2 * w, 0.0).reshape(-1)
    area = (c2 * w).reshape(-1)
    if not np.any(area):
        raise ConditioningError("obstruction field vanishes on the model grid", math.inf)
    gauge = area / np.linalg.norm(area)
    A = sp.vstack([sp.hstack([node, sp.csr_matrix(col[:, None])]), sp.hstack([sp.csr_matrix(gauge[None, :]), sp.csr_matrix((1, 1))])]).tocsr()
    rhs = np.zeros(n1 * n2 + 1)
    rhs[:-1] = np.where(interior, c2 * np.asarray(E(S, P), dtype=float), 0.0).reshape(-1)
    if Eb is not None:
        rhs[:-1] = np.where(arc.reshape(-1), (np.asarray(Eb(S, P), dtype=float) * np.ones_like(S)).reshape(-1), rhs[:-1])
    x, res, cond = _solve_checked(A, rhs, limit)
    return ModelSolution(x[:-1].reshape(S.shape), float(x[-1]), res, (s, psi), cond)
