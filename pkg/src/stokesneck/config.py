"""Run configuration: a single JSON document validated before any compute."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

from .boundary_data import BoundaryData, BoundaryDataError
from .experiments import DEFAULT_EPS, SweepConfig, validate_eps
from .geometry import GeometryError, NeckGeometry
from .mesh import MeshError, MeshParams
from .provenance import canonical_json, content_hash, stamped  # noqa: F401  (re-export)
from .stokes_fem import BACKENDS

DEFAULT_CONFIG = {
    "geometry": {"eps": 1e-2, "kappa": 1.0, "kappa1": 2.0, "R": 0.5, "mu": 1.0,
                 "closure": {"type": "polar_blend", "params": {}}},
    "bc": {"class": "Phi1"},
    "mesh": {},
    "solver": {"backend": "auto", "compatibility_tol": 1e-8},
    "experiment": {"eps": list(DEFAULT_EPS), "samples": [200, 20], "refinement_check": True,
                   "oracle": True, "workers": 1, "check_aux_eps": [1e-2, 1e-3, 1e-4]},
    "output": {"dir": "out"},
}

_TOP_KEYS = set(DEFAULT_CONFIG)
_SOLVER_KEYS = {"backend", "compatibility_tol"}
_EXPERIMENT_KEYS = set(DEFAULT_CONFIG["experiment"])


class ConfigError(ValueError):
    pass


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "bc":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class RunConfig:
    """Resolved and validated configuration."""

    geometry: NeckGeometry
    bc: BoundaryData
    mesh: MeshParams
    solver: dict
    experiment: dict
    output: dict
    raw: dict = field(repr=False, default_factory=dict)

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = set(d) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown configuration blocks: {sorted(unknown)}")
        full = _merge(DEFAULT_CONFIG, d)
        try:
            geom = NeckGeometry.from_dict(full["geometry"])
            bc = BoundaryData.from_dict(full["bc"])
            mesh = MeshParams.from_dict(full["mesh"])
            bad = set(full["mesh"]) - set(MeshParams.__dataclass_fields__)
            if bad:
                raise ConfigError(f"unknown mesh parameters: {sorted(bad)}")
        except (GeometryError, BoundaryDataError, MeshError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        if bc.variant == "Custom":
            raise ConfigError("Custom boundary data cannot be given in a JSON configuration")
        solver = full["solver"]
        if set(solver) - _SOLVER_KEYS:
            raise ConfigError(f"unknown solver keys: {sorted(set(solver) - _SOLVER_KEYS)}")
        if solver["backend"] not in BACKENDS:
            raise ConfigError(f"solver.backend must be one of {BACKENDS}")
        if not float(solver["compatibility_tol"]) > 0:
            raise ConfigError("solver.compatibility_tol must be positive")
        exp = full["experiment"]
        if set(exp) - _EXPERIMENT_KEYS:
            raise ConfigError(f"unknown experiment keys: {sorted(set(exp) - _EXPERIMENT_KEYS)}")
        try:
            validate_eps([float(e) for e in exp["eps"]])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"experiment.eps: {exc}") from exc
        if len(exp["samples"]) != 2 or min(int(s) for s in exp["samples"]) < 2:
            raise ConfigError("experiment.samples must be two integers >= 2")
        if int(exp["workers"]) < 1:
            raise ConfigError("experiment.workers must be >= 1")
        if not isinstance(full["output"].get("dir"), str):
            raise ConfigError("output.dir must be a string")
        full["geometry"] = geom.to_dict()
        full["bc"] = bc.to_dict()
        full["mesh"] = mesh.to_dict()
        return cls(geom, bc, mesh, solver, exp, full["output"], full)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as f:
                d = json.load(f)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
        return cls.from_dict(d)

    def to_dict(self):
        return copy.deepcopy(self.raw)

    def sweep_config(self, workers=None) -> SweepConfig:
        geo = self.geometry.to_dict()
        geo.pop("eps")
        return SweepConfig(
            eps=tuple(float(e) for e in self.experiment["eps"]),
            bc=self.bc.to_dict(),
            geometry=geo,
            mesh=self.mesh.to_dict(),
            samples=tuple(self.experiment["samples"]),
            refinement_check=bool(self.experiment["refinement_check"]),
            oracle=bool(self.experiment["oracle"]),
            workers=int(workers or self.experiment["workers"]),
        )
