"""Compressible barotropic Navier-Stokes on the unit disc.

A desk-scale laboratory for the no-slip isentropic system: a polar
finite-difference/finite-volume solver, the Green-function and Lame-system
machinery used to split the effective viscous flux, and monitors for the
energy functionals that drive the a-priori estimates.
"""

from .grid import PolarGrid
from .solver import (
    AnalysisParams,
    DiscSolver,
    FluidParams,
    InitConfig,
    State,
    init_data,
    run,
)
from .monitors import EstimateLedger

__all__ = [
    "AnalysisParams",
    "DiscSolver",
    "EstimateLedger",
    "FluidParams",
    "InitConfig",
    "PolarGrid",
    "State",
    "init_data",
    "run",
]
__version__ = "0.1.0"
