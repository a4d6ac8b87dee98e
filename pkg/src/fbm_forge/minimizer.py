"""Newton iteration for the perturbation and secant search in the mismatch dial."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .cutoffs import weighted_norm
from .errors import BracketError, NewtonDivergenceError, NoConvergence
from .linear import CONDITION_LIMIT, GAMMA, INTERIOR, SPHERICAL, ResidualMap, factorize, scalar_operators
from .surface import AssembledSurface, BRIDGE_GRID, DISK_GRID, build_initial, construction_params, with_zeta

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-8
SECANT_TOL = 1e-9
MAX_NEWTON = 12
MAX_SECANT = 12
# refresh the Jacobian when the chord iteration contracts slower than this
CHORD_RATE = 0.2
SMALLNESS_EXPONENT = 0.25


@dataclass
class Defects:
    """Residual fields of a perturbed surface, split by row type."""

    mean_curvature: np.ndarray
    boundary_angle: np.ndarray
    planar: float
    sphere: float

    @property
    def sup_h(self) -> float:
        return float(np.max(np.abs(self.mean_curvature))) if self.mean_curvature.size else 0.0

    @property
    def sup_theta(self) -> float:
        return float(np.max(np.abs(self.boundary_angle))) if self.boundary_angle.size else 0.0


def planar_defect(surface: AssembledSurface, X: Dict[str, np.ndarray]) -> float:
    """Largest distance of mirror-edge nodes from their mirror planes."""
    worst = 0.0
    for name, cd in surface.charts.items():
        for edge, refl in cd.chart.reflections.items():
            pts = X[name][cd.chart.edge_index(edge)]
            worst = max(worst, float(np.max(np.linalg.norm(pts - pts @ np.asarray(refl).T, axis=-1))) / 2.0)
    return worst


def sphere_defect(surface: AssembledSurface, X: Dict[str, np.ndarray]) -> float:
    worst = 0.0
    for name, cd in surface.charts.items():
        for edge, tag in cd.chart.edges.items():
            if tag == "spherical":
                pts = X[name][cd.chart.edge_index(edge)]
                worst = max(worst, float(np.max(np.abs(np.linalg.norm(pts, axis=-1) - 1.0))))
    return worst


def residual(surface: AssembledSurface, phi=None, mu: float = 0.0, rmap: Optional[ResidualMap] = None) -> Defects:
    """Mean curvature defect, boundary angle and boundary containment of ``perturb(M, phi)``.

    The mean curvature entry is ``rho^2 (H - mu W)`` on interior rows.
    """
    rmap = rmap or ResidualMap(surface)
    phi = np.zeros(rmap.n) if phi is None else np.asarray(phi, dtype=float)
    X = rmap.perturbed(phi)
    rows = rmap.node_rows(phi, mu)
    return Defects(
        mean_curvature=rows[rmap.kind_vec == INTERIOR],
        boundary_angle=rows[rmap.kind_vec == SPHERICAL],
        planar=planar_defect(surface, X),
        sphere=sphere_defect(surface, X),
    )


def weighted_phi_norm(surface: AssembledSurface, phi, gamma: float = GAMMA) -> float:
    """Sampled weighted C^2 norm ``max rho^-gamma max(|u|, rho |grad u|, rho^2 |Hess u|)``."""
    worst = 0.0
    for name, vals in surface.split(np.asarray(phi, dtype=float)).items():
        cd = surface.charts[name]
        ops = scalar_operators(cd.chart)
        F = cd.fields(check=False)
        u = vals.reshape(-1)
        du = np.stack([ops["1"] @ u, ops["2"] @ u], axis=-1)
        hess = np.empty(u.shape + (2, 2))
        hess[:, 0, 0] = ops["11"] @ u
        hess[:, 1, 1] = ops["22"] @ u
        hess[:, 0, 1] = hess[:, 1, 0] = ops["12"] @ u
        hess -= np.einsum("ncab,nc->nab", F.christoffel.reshape(-1, 2, 2, 2), du)
        inv = F.metric_inv.reshape(-1, 2, 2)
        grad = np.sqrt(np.maximum(np.einsum("na,nab,nb->n", du, inv, du), 0.0))
        hnorm = np.sqrt(np.maximum(np.einsum("nac,nbd,nab,ncd->n", inv, inv, hess, hess), 0.0))
        worst = max(worst, weighted_norm([np.abs(u), grad, hnorm], cd.rho.reshape(-1), gamma, k=2))
    return worst


@dataclass
class NewtonState:
    zeta: float
    phi: np.ndarray
    mu: float
    history: List[dict] = field(default_factory=list)
    refreshes: int = 0
    converged: bool = False

    def table(self) -> List[dict]:
        return [dict(row) for row in self.history]


def newton_solve(
    surface: AssembledSurface,
    tol: float = NEWTON_TOL,
    max_iter: int = MAX_NEWTON,
    jacobian: str = "quasi",
    rmap: Optional[ResidualMap] = None,
) -> NewtonState:
    """Drive ``rho^2 (H_phi - mu W)`` and the boundary angle to zero.

    ``jacobian="quasi"`` refactors the analytic linearization on the
    current perturbed surface every step. ``"chord"`` factors the
    unperturbed one once and refactors with the differenced Jacobian only
    when the contraction stalls. ``"newton"`` uses the differenced
    Jacobian of the discrete residual every step, which converges
    quadratically at several times the cost.
    """
    if jacobian not in ("chord", "quasi", "newton"):
        raise ValueError(f"unknown jacobian strategy {jacobian!r}")
    rmap = rmap or ResidualMap(surface)
    n = rmap.n
    state = NewtonState(surface.params.zeta, np.zeros(n), surface.params.mismatch)
    lu = None
    growth = 0
    prev = math.inf
    for it in range(max_iter + 1):
        F = rmap(state.phi, state.mu)
        if not np.all(np.isfinite(F)):
            raise NewtonDivergenceError("residual is not finite", state.table())
        sup_h = float(np.max(np.abs(F[:n][rmap.kind_vec == INTERIOR])))
        sup_theta = float(np.max(np.abs(F[:n][rmap.kind_vec == SPHERICAL])))
        sup_all = float(np.max(np.abs(F)))
        state.history.append({"iteration": it, "sup_rho2_h": sup_h, "sup_theta": sup_theta, "sup_residual": sup_all, "mu": state.mu})
        log.debug("newton %d: residual %.3e mu %.6e", it, sup_all, state.mu)
        if sup_all <= tol:
            state.converged = True
            break
        if it == max_iter:
            break
        if sup_all > prev:
            growth += 1
            if growth >= 2:
                raise NewtonDivergenceError(f"residual grew twice in a row, now {sup_all:.3e}", state.table())
        else:
            growth = 0
        rate = sup_all / prev if math.isfinite(prev) else 0.0
        # the condition number is checked once, on the unperturbed surface
        limit = CONDITION_LIMIT if lu is None else None
        if jacobian == "newton":
            lu, _ = factorize(rmap.jacobian(state.phi, state.mu), limit)
        elif jacobian == "quasi":
            lu, _ = factorize(rmap.analytic_jacobian(state.phi), limit)
        elif lu is None:
            lu, _ = factorize(rmap.analytic_jacobian(), limit)
        elif rate > CHORD_RATE:
            lu, _ = factorize(rmap.jacobian(state.phi, state.mu), None)
            state.refreshes += 1
        step = lu.solve(F)
        state.phi = state.phi - step[:n]
        state.mu = state.mu - float(step[n])
        prev = sup_all
    return state


def quadratic_remainder(surface: AssembledSurface, phi, scales=(1.0, 0.5, 0.25), rmap: Optional[ResidualMap] = None) -> List[float]:
    """``max |F(s phi) - F(0) - J s phi|`` over interior and spherical rows for each scale ``s``."""
    rmap = rmap or ResidualMap(surface)
    J = rmap.analytic_jacobian()
    n = rmap.n
    base = rmap(np.zeros(n), 0.0)
    out = []
    for s in scales:
        v = s * np.asarray(phi, dtype=float)
        lin = J @ np.concatenate([v, [0.0]])
        rem = rmap(v, 0.0) - base - lin
        rows = rmap.kind_vec != 2
        out.append(float(np.max(np.abs(rem[:n][rows]))))
    return out


@dataclass
class ContinuationResult:
    omega: float
    zeta: float
    mu_total: float
    state: NewtonState
    surface: AssembledSurface
    probes: List[dict]
    defects: Defects
    phi_norm: float
    smallness_bound: float

    def as_dict(self) -> dict:
        p = self.surface.params
        return {
            "omega": self.omega,
            "zeta": self.zeta,
            "tau": p.tau,
            "tau_bar": p.tau_bar,
            "mu_total": self.mu_total,
            "mismatch": p.mismatch,
            "mismatch_plus_zeta": p.mismatch + self.zeta,
            "sup_rho2_h": self.defects.sup_h,
            "sup_theta": self.defects.sup_theta,
            "planar_defect": self.defects.planar,
            "sphere_defect": self.defects.sphere,
            "phi_norm": self.phi_norm,
            "phi_bound": self.smallness_bound,
            "newton_history": self.state.table(),
            "probes": list(self.probes),
        }


def make_solver(omega: float, bridge_grid=BRIDGE_GRID, disk_grid=DISK_GRID, tol: float = NEWTON_TOL, max_iter: int = MAX_NEWTON, jacobian: str = "quasi"):
    """Map ``zeta -> (surface, NewtonState)`` at fixed bending angle and grids."""
    base = construction_params(omega)

    def solve(zeta: float):
        params = with_zeta(base, zeta)
        surface = build_initial(params, bridge_grid=bridge_grid, disk_grid=disk_grid)
        state = newton_solve(surface, tol=tol, max_iter=max_iter, jacobian=jacobian)
        if not state.converged:
            raise NoConvergence(f"Newton did not reach {tol:g} at zeta = {zeta:.6g}", state.table())
        return surface, state

    return base, solve


def zeta_continuation(
    omega: float,
    bridge_grid=BRIDGE_GRID,
    disk_grid=DISK_GRID,
    tol: float = SECANT_TOL,
    newton_tol: float = NEWTON_TOL,
    max_iter: int = MAX_SECANT,
    check_bracket: bool = False,
    solver: Optional[Callable] = None,
    zeta_guess: float = 0.0,
) -> ContinuationResult:
    """Secant iteration on ``zeta -> mu_total`` inside ``[-tau_bar, tau_bar]``.

    The first two probes are ``zeta_guess`` and the zero of the linear
    model ``mu_total ~ mu(guess) + d(mismatch)/d(zeta) (zeta - guess)``. With
    ``check_bracket`` the endpoints are solved first and must give
    opposite signs.
    """
    base, solve = (None, solver) if solver else make_solver(omega, bridge_grid, disk_grid, newton_tol)
    base = base or construction_params(omega)
    tau_bar = base.tau_bar
    probes: List[dict] = []
    cache = {}

    def mu_of(zeta):
        if zeta not in cache:
            surface, state = solve(zeta)
            cache[zeta] = (surface, state)
            probes.append({"zeta": zeta, "mu_total": state.mu, "newton_iterations": len(state.history) - 1})
            log.info("zeta %.9f -> mu_total %.3e", zeta, state.mu)
        return cache[zeta][1].mu

    if check_bracket:
        lo, hi = mu_of(-tau_bar), mu_of(tau_bar)
        if lo * hi > 0:
            raise BracketError(f"mu_total has one sign on the bracket: {lo:.3e}, {hi:.3e}", (lo, hi))

    z0 = float(zeta_guess)
    m0 = mu_of(z0)
    # derivative of the closed-form mismatch with respect to zeta
    slope = (base.tau / omega) * (math.log(math.e * base.tau / 4.0) + 1.0)
    if abs(m0) <= tol:
        z1, m1 = z0, m0
    else:
        z1 = float(np.clip(z0 - m0 / slope, -tau_bar, tau_bar))
        m1 = mu_of(z1)
    for _ in range(max_iter):
        if abs(m1) <= tol:
            break
        if m1 == m0:
            raise NoConvergence("secant slope vanished", probes)
        z2 = z1 - m1 * (z1 - z0) / (m1 - m0)
        if abs(z2) > tau_bar:
            raise BracketError(f"secant step left [-tau_bar, tau_bar]: zeta = {z2:.6g}", (m0, m1))
        z0, m0 = z1, m1
        z1 = z2
        m1 = mu_of(z1)
    else:
        raise NoConvergence(f"secant did not reach |mu_total| <= {tol:g}", probes)
    surface, state = cache[z1]
    rmap = ResidualMap(surface)
    defects = residual(surface, state.phi, 0.0, rmap)
    params = surface.params
    return ContinuationResult(
        omega=omega,
        zeta=z1,
        mu_total=m1,
        state=state,
        surface=surface,
        probes=probes,
        defects=defects,
        phi_norm=weighted_phi_norm(surface, state.phi),
        smallness_bound=params.tau_bar ** (1.0 + params.alpha * SMALLNESS_EXPONENT),
    )


def final_surface(result: ContinuationResult):
    """Node positions of the converged surface per chart."""
    rmap = ResidualMap(result.surface)
    return rmap.perturbed(result.state.phi)

