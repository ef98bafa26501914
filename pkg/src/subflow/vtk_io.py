"""Field export: legacy-VTK ASCII unstructured grids and flat CSV tables.

Point data: potential phi and force potential psi.  Cell data: velocity,
density (the cut-off density, which equals the Bernoulli one wherever the
cut-off is inactive), Mach number recomputed from that density, and the
cut-off-active flag.  All floats print with 17 significant digits so
regression diffs are meaningful.
"""

from __future__ import annotations

import csv

import numpy as np

from . import forces as forces_mod
from . import gas
from .errors import IoError

__all__ = ["cell_fields", "export_vtk", "export_csv", "export_fields"]

_VTK_CELL_TYPE = {2: 5, 3: 10}  # triangle, tetrahedron


def cell_fields(state, cut, force):
    """Derived per-cell fields: velocity, density, mach, active flag."""
    mesh = state.mesh
    psi = np.asarray(forces_mod.potential(force, mesh.barycenters))
    u = state.velocity()
    v = np.einsum("cd,cd->c", u, u)
    density, _, _ = cut.evaluate(v, psi)
    density = np.asarray(density)
    _, dp, _ = gas.pressure(cut.law, density)
    mach = np.sqrt(v / dp)
    active = (v > cut.physical_speed_sq_limit(psi) * (1.0 + 1e-12)).astype(int)
    return u, density, mach, active


def _fmt(x):
    return f"{x:.17g}"


def export_vtk(state, cut, force, path):
    mesh = state.mesh
    u, density, mach, active = cell_fields(state, cut, force)
    psi_pts = np.asarray(forces_mod.potential(force, mesh.vertices))
    nv = len(mesh.vertices)
    nc = len(mesh.cells)
    n_loc = mesh.dimension + 1
    try:
        with open(path, "w") as fh:
            fh.write("# vtk DataFile Version 2.0\n")
            fh.write("subflow fields\n")
            fh.write("ASCII\n")
            fh.write("DATASET UNSTRUCTURED_GRID\n")
            fh.write(f"POINTS {nv} double\n")
            for p in mesh.vertices:
                coords = list(p) + [0.0] * (3 - mesh.dimension)
                fh.write(" ".join(_fmt(c) for c in coords) + "\n")
            fh.write(f"\nCELLS {nc} {nc * (n_loc + 1)}\n")
            for c in mesh.cells:
                fh.write(f"{n_loc} " + " ".join(str(int(i)) for i in c) + "\n")
            fh.write(f"\nCELL_TYPES {nc}\n")
            for _ in range(nc):
                fh.write(f"{_VTK_CELL_TYPE[mesh.dimension]}\n")
            fh.write(f"\nPOINT_DATA {nv}\n")
            fh.write("SCALARS phi double\nLOOKUP_TABLE default\n")
            for x in state.phi:
                fh.write(_fmt(x) + "\n")
            fh.write("SCALARS psi double\nLOOKUP_TABLE default\n")
            for x in psi_pts:
                fh.write(_fmt(x) + "\n")
            fh.write(f"\nCELL_DATA {nc}\n")
            fh.write("VECTORS velocity double\n")
            for row in u:
                coords = list(row) + [0.0] * (3 - mesh.dimension)
                fh.write(" ".join(_fmt(c) for c in coords) + "\n")
            fh.write("SCALARS density double\nLOOKUP_TABLE default\n")
            for x in density:
                fh.write(_fmt(x) + "\n")
            fh.write("SCALARS mach double\nLOOKUP_TABLE default\n")
            for x in mach:
                fh.write(_fmt(x) + "\n")
            fh.write("SCALARS cutoff_active int\nLOOKUP_TABLE default\n")
            for x in active:
                fh.write(f"{int(x)}\n")
    except OSError as exc:
        raise IoError(f"cannot write VTK file {path!r}: {exc}") from exc


def export_csv(state, cut, force, path):
    mesh = state.mesh
    u, density, mach, active = cell_fields(state, cut, force)
    bary = mesh.barycenters
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            coords = [f"x{k}" for k in range(mesh.dimension)]
            vels = [f"u{k}" for k in range(mesh.dimension)]
            writer.writerow(["cell", *coords, *vels, "density", "mach", "cutoff_active"])
            for i in range(len(mesh.cells)):
                writer.writerow(
                    [
                        i,
                        *(_fmt(x) for x in bary[i]),
                        *(_fmt(x) for x in u[i]),
                        _fmt(density[i]),
                        _fmt(mach[i]),
                        int(active[i]),
                    ]
                )
    except OSError as exc:
        raise IoError(f"cannot write CSV file {path!r}: {exc}") from exc


def export_fields(state, cut, force, fmt, path):
    """Dispatch on format: 'vtk' or 'csv'."""
    if fmt == "vtk":
        export_vtk(state, cut, force, path)
    elif fmt == "csv":
        export_csv(state, cut, force, path)
    else:
        raise IoError(f"unknown export format {fmt!r}")
