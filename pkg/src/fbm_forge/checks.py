"""Tagged verification battery and run-record checks."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Dict, Optional

import numpy as np

from .errors import SchemaError
from .geometry import fundamental_forms
from .ld import harmonicity_residual, robin_residual
from .minimizer import newton_solve, quadratic_remainder, residual
from .surface import (
    BRIDGE_GRID,
    DISK_GRID,
    AssembledSurface,
    bend_to_orthogonal,
    build_base,
    build_pre_initial,
    callable_normal,
    construction_params,
    with_zeta,
)

SCHEMA = "fbm-forge/1"

TOLERANCES = {
    "robin": 1e-8,
    "harmonic": 1e-6,
    "base_ortho": 1e-8,
    "catenoid_h": 1e-6,
    "angle_factor": 10.0,
    "initial_ortho": 1e-6,
    "quadratic_factor": 1.5,
    "mu_total": 1e-9,
    "mean_curvature": 1e-7,
    "boundary": 1e-6,
}


@dataclass(frozen=True)
class Check:
    tag: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def as_dict(self) -> dict:
        return asdict(self)


def at_most(tag: str, value: float, tol: float, detail: str = "") -> Check:
    value = float(value)
    return Check(tag, bool(np.isfinite(value) and value <= tol), value, float(tol), detail)


def within_factor(tag: str, value: float, target: float, factor: float, detail: str = "") -> Check:
    """Passes when ``value / target`` lies in ``[1/factor, factor]``; reports the ratio."""
    ratio = float(value) / float(target)
    return Check(tag, bool(1.0 / factor <= ratio <= factor), ratio, float(factor), detail)


def spherical_edge_angle(surface: AssembledSurface) -> float:
    """Largest ``|<X, nu>|`` along spherical edges, normals from the immersion itself."""
    worst = 0.0
    for cd in surface.charts.values():
        chart = cd.chart
        U1, U2 = chart.mesh()
        for edge in chart.edges_tagged("spherical"):
            e = chart.edge_index(edge)
            u1, u2 = U1[e], U2[e]
            X = chart.to_world(chart.immersion(u1, u2))
            N = chart.to_world(callable_normal(chart.immersion, u1, u2, chart.orientation))
            worst = max(worst, float(np.max(np.abs(np.sum(X * N, axis=-1)))))
    return worst


def base_orthogonality(params, samples: int = 400) -> float:
    """Largest ``|<X, nu>|`` of the bent base surface along its circular arc."""
    base = build_base(params)
    theta = np.linspace(-np.pi / 2, np.pi / 2, samples)
    z = np.exp(1j * theta)
    z = z[np.abs(z - 1.0) > 1e-9]
    return float(np.max(np.abs(np.sum(base.immersion(z) * base.normal(z), axis=-1))))


def catenoid_mean_curvature(surface: AssembledSurface) -> float:
    return float(np.max(np.abs(fundamental_forms(surface.charts["bridge"].chart).mean_curvature)))


def initial_residual(surface: AssembledSurface) -> float:
    """``sup rho^2 |H - M w|`` over interior nodes of an unperturbed surface."""
    return residual(surface, None, surface.params.mismatch).sup_h


def lemma_checks(
    omega: float,
    zeta: float = 0.0,
    bridge_grid=BRIDGE_GRID,
    disk_grid=DISK_GRID,
    bend: bool = True,
    quadratic: bool = True,
    tolerances: Optional[dict] = None,
) -> Dict[str, Check]:
    """Build the pre-initial and initial surfaces at ``omega`` and run the battery."""
    tol = dict(TOLERANCES, **(tolerances or {}))
    params = construction_params(omega)
    if zeta:
        params = with_zeta(params, zeta)
    tau, tau_bar, alpha = params.tau, params.tau_bar, params.alpha
    checks = [
        at_most("L3.2-robin", robin_residual(100), tol["robin"], "|dG/dn - G| on 100 arc samples"),
        at_most("L3.2-harmonic", harmonicity_residual(), tol["harmonic"], "|Laplacian G| away from p"),
        at_most("L4.3iv-ortho", base_orthogonality(params), tol["base_ortho"], "base surface along the arc"),
    ]
    pre = build_pre_initial(params, bridge_grid=bridge_grid, disk_grid=disk_grid)
    checks.append(at_most("L5.10iii-H0", catenoid_mean_curvature(pre), tol["catenoid_h"], "bridge chart mean curvature"))
    angle_scale = tau * abs(math.log(tau))
    checks.append(
        within_factor(
            "L5.13v-angle", spherical_edge_angle(pre), angle_scale, tol["angle_factor"],
            f"pre-initial boundary angle over tau|log tau| = {angle_scale:.4g}",
        )
    )
    initial = bend_to_orthogonal(pre, enabled=bend)
    checks.append(at_most("L6.2iv-ortho", spherical_edge_angle(initial), tol["initial_ortho"], "initial surface boundary angle"))
    bound = tau_bar ** (1.0 + alpha / 3.0)
    checks.append(at_most("L7.3-smallness", initial_residual(initial), bound, "sup rho^2 |H - M w| against tau_bar^(1+alpha/3)"))
    if quadratic:
        state = newton_solve(initial)
        rem = quadratic_remainder(initial, state.phi)
        checks.append(
            within_factor(
                "L8.1-quadratic", rem[0] / rem[1], 4.0, tol["quadratic_factor"],
                "remainder ratio under phi -> phi/2 over the expected 4",
            )
        )
    return {c.tag: c for c in checks}


def record_checks(record: dict, tolerances: Optional[dict] = None) -> Dict[str, Check]:
    """Checks on a solve run record (the JSON written by the ``solve`` command)."""
    tol = dict(TOLERANCES, **(tolerances or {}))
    result = record.get("result")
    if not isinstance(result, dict):
        raise SchemaError("run record has no 'result' section")
    needed = ("mu_total", "sup_rho2_h", "sup_theta", "planar_defect", "sphere_defect", "phi_norm", "phi_bound")
    missing = [k for k in needed if k not in result]
    if missing:
        raise SchemaError(f"run record result lacks {missing}")
    boundary = max(result["sup_theta"], result["planar_defect"], result["sphere_defect"])
    checks = [
        at_most("P-linear-mu", abs(result["mu_total"]), tol["mu_total"], "obstruction coefficient at the final zeta"),
        at_most("T-main-H", result["sup_rho2_h"], tol["mean_curvature"], "sup rho^2 |H| of the final surface"),
        at_most("T-main-boundary", boundary, tol["boundary"], "boundary angle, planar and sphere defects"),
        at_most("L8.1-regime", result["phi_norm"], result["phi_bound"], "weighted C2 norm of phi against tau_bar^(1+alpha/4)"),
    ]
    return {c.tag: c for c in checks}


def report(checks: Dict[str, Check], config: Optional[dict] = None) -> dict:
    """JSON-ready report with checks in sorted tag order."""
    return {
        "schema": SCHEMA,
        "kind": "verify",
        "config": config or {},
        "checks": {tag: checks[tag].as_dict() for tag in sorted(checks)},
        "all_pass": all(c.passed for c in checks.values()),
    }


def verify(source, config: Optional[dict] = None, **kw) -> dict:
    """Report for a run record (dict) or a bending angle (float)."""
    if isinstance(source, dict):
        if source.get("schema") != SCHEMA:
            raise SchemaError(f"expected schema {SCHEMA!r}, got {source.get('schema')!r}")
        return report(record_checks(source, kw.get("tolerances")), config or source.get("config"))
    return report(lemma_checks(float(source), **kw), config)
