"""Command-line entry point ``fbm-forge``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import assembly, checks, config, ld, minimizer
from .errors import ForgeError, NoConvergence, SchemaError
from .linear import ResidualMap
from .surface import build_initial, with_zeta

log = logging.getLogger("fbm_forge")

RECORD_NAME = "record.json"
PHI_NAME = "phi.npy"
MESH_NAME = "mesh.npz"
HISTORY_NAME = "newton_history.csv"


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _emit(payload: dict, out: Optional[str], name: str = RECORD_NAME) -> Optional[Path]:
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default)
    if out is None:
        print(text)
        return None
    path = Path(out)
    if path.suffix != ".json":
        path.mkdir(parents=True, exist_ok=True)
        path = path / name
    path.write_text(text + "\n")
    log.info("wrote %s", path)
    return path


def _record(kind: str, cfg: dict, **sections) -> dict:
    return {"schema": config.SCHEMA, "kind": kind, "config": cfg, **sections}


def _grids(cfg):
    return tuple(cfg["grids"]["bridge"]), tuple(cfg["grids"]["disk"])


def _initial(cfg):
    bridge_grid, disk_grid = _grids(cfg)
    return build_initial(config.construction_from(cfg), bridge_grid=bridge_grid, disk_grid=disk_grid)


def _parse_points(text: str):
    try:
        return np.array([complex(p.replace(" ", "").replace("i", "j")) for p in text.split(",")])
    except ValueError:
        raise SchemaError(f"points {text!r}: expected comma-separated complex numbers such as 0.5+0.2i") from None


# --------------------------------------------------------------------------
# subcommands


def cmd_ld_eval(args, cfg):
    params = config.construction_from(cfg)
    z = _parse_points(args.points)
    value, grad, hess = ld.ld_eval(params, z)
    return _record(
        "ld-eval",
        cfg,
        result={
            "tau_bar": params.tau_bar,
            "tau": params.tau,
            "mismatch_closed": ld.mismatch(params),
            "mismatch_fit": ld.mismatch(params, "numeric_fit"),
            "mismatch_envelope": ld.mismatch_envelope(params),
            "robin_residual": ld.robin_residual(),
            "harmonicity_residual": ld.harmonicity_residual(),
            "params": params.as_dict(),
            "points": [[p.real, p.imag] for p in z],
            "phi": value,
            "grad": grad,
            "hess": hess,
        },
    )


def _chart_nodes(surface) -> dict:
    out = {}
    for name, cd in surface.charts.items():
        F = cd.fields(check=False)
        out[name] = {
            "u1": cd.chart.u1,
            "u2": cd.chart.u2,
            "edges": cd.chart.edges,
            "X": cd.world(),
            "normal": cd.chart.to_world(cd.normal),
            "mean_curvature": F.mean_curvature,
            "rho": cd.rho,
        }
    return out


def cmd_build(args, cfg):
    surface = _initial(cfg)
    d = minimizer.residual(surface, None, surface.params.mismatch)
    if args.export_obj:
        piece = assembly.fundamental_piece(surface)
        mesh = assembly.AnnulusMesh(piece.vertices, piece.triangles, np.column_stack([np.zeros_like(piece.chart), piece.chart, piece.node]))
        assembly.write_obj(mesh, args.export_obj, comment=f"{config.SCHEMA} fundamental piece")
    result = {
        "params": surface.params.as_dict(),
        "stage": surface.stage,
        "nodes": surface.size,
        "sup_rho2_h_minus_mw": d.sup_h,
        "sup_theta": checks.spherical_edge_angle(surface),
        "planar_defect": d.planar,
        "sphere_defect": d.sphere,
        "info": surface.info,
    }
    if args.with_nodes:
        result["charts"] = _chart_nodes(surface)
    return _record("build", cfg, result=result)


def _write_history(out: Optional[str], rows):
    if out is None or not rows:
        return
    path = Path(out)
    path = path.parent if path.suffix == ".json" else path
    path.mkdir(parents=True, exist_ok=True)
    with open(path / HISTORY_NAME, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def _save_phi(out: Optional[str], phi):
    if out is None:
        return
    path = Path(out)
    path = path.parent if path.suffix == ".json" else path
    path.mkdir(parents=True, exist_ok=True)
    np.save(path / PHI_NAME, phi)


def cmd_solve(args, cfg):
    bridge_grid, disk_grid = _grids(cfg)
    tol = cfg["tolerances"]
    base = config.construction_from(cfg)

    def solve(zeta):
        surface = build_initial(with_zeta(base, zeta), bridge_grid=bridge_grid, disk_grid=disk_grid)
        state = minimizer.newton_solve(surface, tol=tol["newton"])
        if not state.converged:
            raise NoConvergence(f"Newton did not converge at zeta = {zeta:.6g}", state.table())
        return surface, state

    result = minimizer.zeta_continuation(
        base.omega, tol=tol["secant"], solver=solve, zeta_guess=cfg["params"]["zeta"] or 0.0,
        check_bracket=args.check_bracket,
    )
    cfg = dict(cfg, params=dict(cfg["params"], zeta=result.zeta))
    _save_phi(args.out, result.state.phi)
    _write_history(args.out, result.state.table())
    return _record("solve", cfg, result=result.as_dict())


def cmd_minimize(args, cfg):
    surface = _initial(cfg)
    state = minimizer.newton_solve(surface, tol=cfg["tolerances"]["newton"], jacobian=args.jacobian)
    d = minimizer.residual(surface, state.phi, state.mu)
    _save_phi(args.out, state.phi)
    _write_history(args.out, state.table())
    return _record(
        "minimize",
        cfg,
        result={
            "converged": state.converged,
            "zeta": surface.params.zeta,
            "mu": state.mu,
            "sup_rho2_h": d.sup_h,
            "sup_theta": d.sup_theta,
            "planar_defect": d.planar,
            "sphere_defect": d.sphere,
            "newton_history": state.table(),
        },
    )


def _surface_and_nodes(args, cfg):
    """Initial surface for the config, with converged nodes when ``--run`` is given."""
    if args.run:
        run = Path(args.run)
        record = json.loads((run / RECORD_NAME).read_text())
        if record.get("schema") != config.SCHEMA:
            raise SchemaError(f"{run / RECORD_NAME}: schema {record.get('schema')!r} is not {config.SCHEMA!r}")
        cfg = config.merge(config.default_config(), record["config"])
        surface = _initial(cfg)
        phi = np.load(run / PHI_NAME)
        return cfg, surface, ResidualMap(surface).perturbed(phi)
    return cfg, _initial(cfg), None


def cmd_assemble(args, cfg):
    cfg, surface, nodes = _surface_and_nodes(args, cfg)
    out = cfg["output"]
    copies = args.copies if args.copies is not None else out["copies"]
    mesh = assembly.assemble_surface(
        surface, nodes, cap=out["cap"], copies=copies, weld_tol=cfg["tolerances"]["weld"]
    )
    group = assembly.enumerate_group(surface.params.omega, out["cap"])
    if args.out:
        path = Path(args.out)
        path.mkdir(parents=True, exist_ok=True)
        np.savez(path / MESH_NAME, vertices=mesh.vertices, triangles=mesh.triangles, provenance=mesh.provenance)
        assembly.export(mesh, out["format"], path / f"mesh.{out['format']}", comment=f"{config.SCHEMA} omega={surface.params.omega!r}")
    return _record("assemble", cfg, group=group.as_dict(), result=mesh.diagnostics)


def cmd_export(args, cfg):
    src = Path(args.mesh)
    try:
        data = np.load(src)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot read mesh archive: {exc.strerror}", str(src)) from exc
    mesh = assembly.AnnulusMesh(data["vertices"], data["triangles"], data["provenance"])
    fmt = args.format or cfg["output"]["format"]
    target = Path(args.out) if args.out else src.with_suffix("." + fmt)
    assembly.export(mesh, fmt, target)
    return _record("export", cfg, result={"path": str(target), "format": fmt, "vertices": mesh.n_vertices, "triangles": mesh.n_triangles})


def cmd_verify(args, cfg):
    if args.record:
        record = json.loads(Path(args.record).read_text())
        return checks.verify(record)
    bridge_grid, disk_grid = _grids(cfg)
    return checks.verify(
        cfg["params"]["omega"], config=cfg, zeta=cfg["params"]["zeta"] or 0.0,
        bridge_grid=bridge_grid, disk_grid=disk_grid, bend=not args.no_bend, quadratic=not args.skip_quadratic,
    )


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--omega", type=float, help="bending angle")
    common.add_argument("--zeta", type=float, help="mismatch dial (initial guess for solve)")
    common.add_argument("--alpha", type=float, help="bridge radius exponent")
    common.add_argument("--tau", type=float, help="explicit bridge size, skipping calibration")
    common.add_argument("--grid", help="grid scale k or BxB/DxD for bridge and disk charts")
    common.add_argument("--config", help="JSON config file (schema fbm-forge/1)")
    common.add_argument("--out", help="output directory or .json file; stdout when omitted")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fbm-forge", description="Free boundary minimal annuli by gluing.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ld-eval", parents=[common], help="evaluate the linearized doubling solution")
    p.add_argument("--points", default="0.5,0.5+0.5i,0+0.9i", help="comma-separated points of the half-disk")
    p.set_defaults(func=cmd_ld_eval)

    p = sub.add_parser("build", parents=[common], help="build the initial surface and report its defects")
    p.add_argument("--export-obj", help="write the fundamental piece as OBJ")
    p.add_argument("--with-nodes", action="store_true", help="include chart nodes and fields in the record")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("solve", parents=[common], help="Newton plus secant search in zeta")
    p.add_argument("--check-bracket", action="store_true", help="solve at zeta = +-tau_bar first")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("minimize", parents=[common], help="Newton solve at fixed zeta")
    p.add_argument("--jacobian", choices=("quasi", "chord", "newton"), default="quasi")
    p.set_defaults(func=cmd_minimize)

    p = sub.add_parser("assemble", parents=[common], help="assemble copies under the symmetry group")
    p.add_argument("--run", help="directory written by solve or minimize")
    p.add_argument("--copies", type=int, help="strip mode: number of periods")
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("verify", parents=[common], help="tagged verification report")
    p.add_argument("--record", help="run record to check instead of building surfaces")
    p.add_argument("--no-bend", action="store_true", help="skip the orthogonality bending")
    p.add_argument("--skip-quadratic", action="store_true", help="skip the Newton solve of the quadratic test")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("export", parents=[common], help="convert an assembled mesh archive to OBJ or PLY")
    p.add_argument("mesh", help="mesh.npz written by assemble")
    p.add_argument("--format", choices=("obj", "ply"))
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config.resolve(args.config, args.omega, args.zeta, args.alpha, args.grid, args.tau)
        payload = args.func(args, cfg)
    except (ForgeError, OSError) as exc:
        print(f"fbm-forge {args.command}: {exc}", file=sys.stderr)
        return 2
    name = "report.json" if args.command == "verify" else RECORD_NAME
    if args.command == "export":
        print(json.dumps(payload["result"], sort_keys=True))
    else:
        _emit(payload, args.out, name)
    if args.command == "verify" and not payload["all_pass"]:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
