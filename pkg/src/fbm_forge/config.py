"""Run configuration: one JSON document with params, grids, tolerances and output sections."""
from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Optional

from .assembly import DEFAULT_CAP, WELD_TOL
from .errors import SchemaError
from .ld import OBSTRUCTION_RADIUS, LDParams
from .minimizer import NEWTON_TOL, SECANT_TOL
from .surface import BRIDGE_GRID, CONSTRUCTION_ALPHA, DISK_GRID, OBSTRUCTION_FACTOR, construction_params

SCHEMA = "fbm-forge/1"

DEFAULTS = {
    "schema": SCHEMA,
    "params": {"omega": 0.1, "zeta": None, "alpha": CONSTRUCTION_ALPHA, "tau": None},
    "grids": {"bridge": list(BRIDGE_GRID), "disk": list(DISK_GRID)},
    "tolerances": {"newton": NEWTON_TOL, "secant": SECANT_TOL, "weld": WELD_TOL},
    "output": {"format": "obj", "copies": None, "cap": DEFAULT_CAP},
}
SECTIONS = ("params", "grids", "tolerances", "output")


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def merge(base: dict, update: dict) -> dict:
    """Section-wise merge; unknown sections or keys raise SchemaError."""
    out = copy.deepcopy(base)
    for key, value in update.items():
        if key == "schema":
            if value != SCHEMA:
                raise SchemaError(f"config schema {value!r} is not {SCHEMA!r}")
            continue
        if key not in SECTIONS:
            raise SchemaError(f"unknown config section {key!r}; expected one of {SECTIONS}")
        if not isinstance(value, dict):
            raise SchemaError(f"config section {key!r} must be an object")
        unknown = set(value) - set(out[key])
        if unknown:
            raise SchemaError(f"unknown keys in section {key!r}: {sorted(unknown)}")
        out[key].update(value)
    validate(out)
    return out


def validate(cfg: dict) -> None:
    for name in ("bridge", "disk"):
        grid = cfg["grids"][name]
        if len(grid) != 2 or any(int(n) != n or n < 8 for n in grid):
            raise SchemaError(f"grid {name!r} must be two integers >= 8, got {grid}")
    omega = cfg["params"]["omega"]
    if not isinstance(omega, (int, float)) or omega <= 0:
        raise SchemaError(f"params.omega must be a positive number, got {omega!r}")
    if cfg["output"]["format"] not in ("obj", "ply"):
        raise SchemaError(f"output.format must be 'obj' or 'ply', got {cfg['output']['format']!r}")


def load(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise SchemaError(f"{path}: config must be a JSON object")
    return merge(default_config(), data)


def parse_grid(text: str) -> dict:
    """``"2"`` scales both default grids; ``"96x32/192x64"`` sets bridge and disk."""
    text = text.strip()
    if "/" not in text:
        try:
            k = int(text)
        except ValueError:
            raise SchemaError(f"grid {text!r}: expected an integer scale or BxB/DxD") from None
        if k < 1:
            raise SchemaError(f"grid scale must be positive, got {k}")
        return {"bridge": [k * n for n in BRIDGE_GRID], "disk": [k * n for n in DISK_GRID]}
    try:
        bridge, disk = ([int(n) for n in part.split("x")] for part in text.split("/"))
    except ValueError:
        raise SchemaError(f"grid {text!r}: expected BxB/DxD") from None
    return {"bridge": bridge, "disk": disk}


def resolve(config_path: Optional[str] = None, omega=None, zeta=None, alpha=None, grid=None, tau=None) -> dict:
    """Defaults, then the config file, then command-line flags."""
    cfg = load(config_path) if config_path else default_config()
    flags = {k: v for k, v in {"omega": omega, "zeta": zeta, "alpha": alpha, "tau": tau}.items() if v is not None}
    update = {"params": flags}
    if grid:
        update["grids"] = parse_grid(grid)
    return merge(cfg, update)


def construction_from(cfg: dict):
    """Dials for the configured run.

    An explicit ``tau`` skips the calibration and the admissible range of
    the bending angle; it is meant for assembling uncalibrated surfaces.
    """
    p = cfg["params"]
    zeta = p["zeta"] or 0.0
    if p["tau"] is not None:
        tau = float(p["tau"])
        return LDParams(
            omega=float(p["omega"]), zeta=zeta, tau=tau, tau_bar=tau, alpha=p["alpha"],
            delta_obs=max(OBSTRUCTION_RADIUS, OBSTRUCTION_FACTOR * tau ** p["alpha"]),
        )
    return construction_params(float(p["omega"]), zeta, p["alpha"])
