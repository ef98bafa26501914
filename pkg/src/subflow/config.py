"""Run configuration: a single YAML file drives every pipeline.

The schema is nested key-value; see ``RunConfig.EXAMPLE`` for a complete
annotated file.  Validation happens before any solve and raises
ConfigError naming the offending key.  Configurations round-trip through
the serializer losslessly at the data level.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import forces as forces_mod
from . import gas
from . import mesh as mesh_mod
from .errors import AdmissibilityError, ConfigError
from .solver import Problem

__all__ = ["RunConfig", "load_config", "dump_config"]

EXAMPLE = """\
# subflow run configuration (YAML)
gas:
  kind: gamma_law          # gamma_law | isothermal | tabulated
  kappa: 1.0
  gamma: 2.0               # required for gamma_law (must exceed 1)
  # path: gas_table.txt    # tabulated: two-column ASCII "rho pressure"
  # rho_floor: 1.0e-8
force:
  kind: point_sources      # constant | point_sources | newtonian_body | radial_profile
  sources:
    - {center: [0.0, 0.0], strength: 0.5}
  # value: 0.0             # constant
  # path: profile.txt      # radial_profile: two-column ASCII "r psi"
  # gravitational_constant: 1.0         # newtonian_body
  # body: {radius: 1.0, refinement_level: 1, n_radial: 2}
  # body_density: 0.2387324146378430    # uniform per-cell body density
mesh:
  kind: annulus            # annulus | shell | file
  inner_radius: 1.0
  outer_radius: 10.0
  n_radial: 16
  n_angular: 32
  grading: 1.15
  # refinement_level: 1    # shell
  # path: mesh.txt         # file
cutoff:
  theta: 0.1
  theta_schedule: [0.1, 0.05, 0.025, 0.0125]
  padding: 0.01
solver:
  tol: 1.0e-11
  max_iter: 60
  cg_rtol: 1.0e-8
  deterministic_reduction: true
flow:
  q_infinity: 0.3
continuation:
  q_list: [0.05, 0.1, 0.15, 0.2, 0.25, 0.3]
  tol_q: null              # null picks 1e-3 * q_cr at the last certified argmax
  q_cap_factor: 1.5
limit:
  n_steps: 4
  q_hat: null              # null runs the critical search first
check:
  psi_range: [0.0, 2.0]    # used by check-gas when no mesh sampling is wanted
output:
  directory: out
"""


def _need(mapping, key, path):
    if key not in mapping:
        raise ConfigError(f"missing key {path}.{key}")
    return mapping[key]


def _get(mapping, key, default=None):
    val = mapping.get(key, default)
    return default if val is None else val


@dataclass(eq=False)
class RunConfig:
    """Parsed and validated run configuration."""

    data: dict
    base_dir: str = "."

    EXAMPLE = EXAMPLE

    # ---------------------------------------------------------------- access
    def section(self, name):
        sec = self.data.get(name, {})
        if sec is None:
            sec = {}
        if not isinstance(sec, dict):
            raise ConfigError(f"section {name} must be a mapping")
        return sec

    def _resolve(self, path):
        if os.path.isabs(path):
            return path
        return os.path.join(self.base_dir, path)

    # ------------------------------------------------------------ validation
    def validate(self):
        gas_sec = self.section("gas")
        kind = _need(gas_sec, "kind", "gas")
        if kind not in ("gamma_law", "isothermal", "tabulated"):
            raise ConfigError(f"gas.kind {kind!r} is not one of gamma_law|isothermal|tabulated")
        if kind in ("gamma_law", "isothermal"):
            kappa = _need(gas_sec, "kappa", "gas")
            if not kappa > 0:
                raise ConfigError("gas.kappa must be positive")
        if kind == "gamma_law":
            gamma = _need(gas_sec, "gamma", "gas")
            if not gamma > 1:
                raise ConfigError("gas.gamma must exceed 1")
        if kind == "tabulated":
            path = self._resolve(_need(gas_sec, "path", "gas"))
            if not os.path.exists(path):
                raise ConfigError(f"gas.path {path!r} does not exist")

        force_sec = self.section("force")
        fkind = _need(force_sec, "kind", "force")
        if fkind not in ("constant", "point_sources", "newtonian_body", "radial_profile"):
            raise ConfigError(
                f"force.kind {fkind!r} is not one of constant|point_sources|newtonian_body|radial_profile"
            )
        if fkind == "point_sources" and not _get(force_sec, "sources", []):
            raise ConfigError("force.sources must list at least one source")
        if fkind == "radial_profile":
            path = self._resolve(_need(force_sec, "path", "force"))
            if not os.path.exists(path):
                raise ConfigError(f"force.path {path!r} does not exist")

        mesh_sec = self.section("mesh")
        mkind = _need(mesh_sec, "kind", "mesh")
        if mkind not in ("annulus", "shell", "file"):
            raise ConfigError(f"mesh.kind {mkind!r} is not one of annulus|shell|file")
        if mkind in ("annulus", "shell"):
            inner = _need(mesh_sec, "inner_radius", "mesh")
            outer = _need(mesh_sec, "outer_radius", "mesh")
            if not inner < outer:
                raise ConfigError("mesh.inner_radius must be smaller than mesh.outer_radius")
        if mkind == "file":
            path = self._resolve(_need(mesh_sec, "path", "mesh"))
            if not os.path.exists(path):
                raise ConfigError(f"mesh.path {path!r} does not exist")

        cut_sec = self.section("cutoff")
        theta = _get(cut_sec, "theta", 0.1)
        if not 0.0 < theta < 0.5:
            raise ConfigError("cutoff.theta must lie in the open interval (0, 0.5)")
        for t in _get(cut_sec, "theta_schedule", []):
            if not 0.0 < t < 0.5:
                raise ConfigError("cutoff.theta_schedule entries must lie in (0, 0.5)")
        if not _get(cut_sec, "padding", 0.01) >= 0:
            raise ConfigError("cutoff.padding must be nonnegative")

        solver_sec = self.section("solver")
        if not _get(solver_sec, "tol", 1e-11) > 0:
            raise ConfigError("solver.tol must be positive")
        if not _get(solver_sec, "max_iter", 60) >= 1:
            raise ConfigError("solver.max_iter must be at least 1")

        flow_sec = self.section("flow")
        if _get(flow_sec, "q_infinity", 0.0) < 0:
            raise ConfigError("flow.q_infinity must be nonnegative")
        return self

    # -------------------------------------------------------------- builders
    def build_gas(self):
        sec = self.section("gas")
        kind = sec["kind"]
        kwargs = {}
        if "rho_floor" in sec and sec["rho_floor"] is not None:
            kwargs["rho_floor"] = float(sec["rho_floor"])
        if kind == "gamma_law":
            return gas.GammaLaw(kappa=float(sec["kappa"]), gamma=float(sec["gamma"]), **kwargs)
        if kind == "isothermal":
            return gas.Isothermal(kappa=float(sec["kappa"]), **kwargs)
        return gas.load_tabulated(self._resolve(sec["path"]), **kwargs)

    def build_mesh(self):
        sec = self.section("mesh")
        kind = sec["kind"]
        if kind == "annulus":
            return mesh_mod.generate_annulus_2d(
                float(sec["inner_radius"]),
                float(sec["outer_radius"]),
                int(_get(sec, "n_radial", 16)),
                int(_get(sec, "n_angular", 32)),
                grading=float(_get(sec, "grading", 1.0)),
            )
        if kind == "shell":
            return mesh_mod.generate_shell_3d(
                float(sec["inner_radius"]),
                float(sec["outer_radius"]),
                int(_get(sec, "refinement_level", 1)),
                int(_get(sec, "n_radial", 4)),
            )
        return mesh_mod.load_mesh(self._resolve(sec["path"]))

    def build_force(self, dimension):
        sec = self.section("force")
        kind = sec["kind"]
        if kind == "constant":
            return forces_mod.ConstantPotential(
                value=float(_get(sec, "value", 0.0)), dimension=dimension
            )
        if kind == "point_sources":
            sources = tuple(
                (tuple(float(c) for c in s["center"]), float(s["strength"]))
                for s in sec["sources"]
            )
            return forces_mod.PointSourcePotential(sources=sources, dimension=dimension)
        if kind == "radial_profile":
            return forces_mod.load_radial_profile(
                self._resolve(sec["path"]), dimension=dimension
            )
        body_sec = _get(sec, "body", {})
        body = mesh_mod.generate_ball_3d(
            float(_get(body_sec, "radius", 1.0)),
            int(_get(body_sec, "refinement_level", 1)),
            int(_get(body_sec, "n_radial", 2)),
        )
        return forces_mod.NewtonianBodyPotential(
            body=body,
            density=float(_get(sec, "body_density", 1.0)),
            gravitational_constant=float(_get(sec, "gravitational_constant", 1.0)),
        )

    def build_problem(self):
        law = self.build_gas()
        msh = self.build_mesh()
        force = self.build_force(msh.dimension)
        solver_sec = self.section("solver")
        try:
            return Problem(
                law=law,
                force=force,
                mesh=msh,
                pad_rel=float(_get(self.section("cutoff"), "padding", 0.01)),
                tol=float(_get(solver_sec, "tol", 1e-11)),
                max_iter=int(_get(solver_sec, "max_iter", 60)),
                cg_rtol=float(_get(solver_sec, "cg_rtol", 1e-8)),
                deterministic=bool(_get(solver_sec, "deterministic_reduction", True)),
            )
        except AdmissibilityError as exc:
            raise ConfigError(
                f"force.psi range is inadmissible for the configured gas law: {exc}"
            ) from exc

    # ---------------------------------------------------------------- values
    @property
    def theta(self):
        return float(_get(self.section("cutoff"), "theta", 0.1))

    @property
    def theta_schedule(self):
        sched = _get(self.section("cutoff"), "theta_schedule", None)
        if sched:
            return [float(t) for t in sched]
        return [0.1, 0.05, 0.025, 0.0125]

    @property
    def q_infinity(self):
        return float(_get(self.section("flow"), "q_infinity", 0.0))

    @property
    def output_dir(self):
        return self._resolve(_get(self.section("output"), "directory", "out"))


def load_config(path):
    """Parse, wrap and validate a YAML run configuration."""
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path!r}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path!r} must be a YAML mapping")
    cfg = RunConfig(data=data, base_dir=os.path.dirname(os.path.abspath(path)))
    return cfg.validate()


def dump_config(cfg, path):
    """Serialize back to YAML (data-level lossless round trip)."""
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.data, fh, sort_keys=False)
