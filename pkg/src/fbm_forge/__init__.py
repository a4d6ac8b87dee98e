"""Numerical gluing construction of free boundary minimal annuli in the unit ball."""
from .assembly import AnnulusMesh, SymmetryGroup, assemble, assemble_surface, enumerate_group, export
from .checks import verify
from .ld import LDParams, calibrate_tau, green_G, ld_eval, mismatch
from .minimizer import newton_solve, zeta_continuation
from .surface import build_initial, build_pre_initial, construction_params

__version__ = "0.1.0"

__all__ = [
    "AnnulusMesh",
    "LDParams",
    "SymmetryGroup",
    "assemble",
    "assemble_surface",
    "build_initial",
    "build_pre_initial",
    "calibrate_tau",
    "construction_params",
    "enumerate_group",
    "export",
    "green_G",
    "ld_eval",
    "mismatch",
    "newton_solve",
    "verify",
    "zeta_continuation",
]
