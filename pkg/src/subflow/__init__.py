"""Steady compressible potential flow in truncated exterior domains.

Convex energy minimization of the cut-off potential equation with
conservative body forces, plus continuation toward the critical free-stream
speed and approach-to-critical diagnostics.
"""

from . import config, continuation, cutoff, errors, forces, gas, mesh, solver, sonic, vtk_io

__all__ = [
    "config",
    "continuation",
    "cutoff",
    "errors",
    "forces",
    "gas",
    "mesh",
    "solver",
    "sonic",
    "vtk_io",
]

__version__ = "0.1.0"
