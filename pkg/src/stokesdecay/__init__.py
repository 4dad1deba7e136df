"""Numerical laboratory for the free-surface Stokes semigroup in the half space."""

__version__ = "0.1.0"

from .symbols import PhysicalParams, SpectralPoint, make_spectral_point
from .lopatinskii import CalibrationReport, calibrate_A0, solve_roots, stability_scan

__all__ = [
    "PhysicalParams",
    "SpectralPoint",
    "make_spectral_point",
    "CalibrationReport",
    "calibrate_A0",
    "solve_roots",
    "stability_scan",
    "__version__",
]
