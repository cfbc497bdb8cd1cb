"""Run configuration: JSON schema, parsing and model construction."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np
import sympy as sp

from qsdlab.errors import ConfigError
from qsdlab.io import dumps
from qsdlab.model import (
    DomainSpec,
    GridSpec,
    KineticLangevin,
    OverdampedLangevin,
    PotentialField,
    ScalarField,
    StableSDE,
    VectorField,
    build_generator,
    kinetic_domain,
)

SCHEMA_VERSION = 1

_num = {"type": ["number", "string"]}
_expr = {"type": "string", "minLength": 1}
_pos = {"type": "number", "exclusiveMinimum": 0}
_file = {"type": "object", "additionalProperties": False, "required": ["file"],
         "properties": {"file": {"type": "string"}}}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema", "experiment", "model"],
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "experiment": {"enum": ["spectral", "simulate", "ldp", "validate"]},
        "description": {"type": "string"},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["process", "domain", "grid"],
            "properties": {
                "process": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["overdamped", "kinetic", "stable"]},
                        "U": _expr,
                        "drift": {"type": "array", "items": _expr, "minItems": 1, "maxItems": 3},
                        "scheme": {"enum": ["central", "symmetric"]},
                        "gamma": _pos,
                        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 2},
                        "c_alpha": _pos,
                        "dim": {"type": "integer", "minimum": 1, "maximum": 3},
                    },
                },
                "domain": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["bounds"],
                    "properties": {
                        "bounds": {"type": "array", "minItems": 1, "maxItems": 3,
                                   "items": {"type": "array", "items": _num,
                                             "minItems": 2, "maxItems": 2}},
                        "mask": _expr,
                    },
                },
                "grid": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "counts": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                        "spacing": {"oneOf": [_pos, {"type": "array", "items": _pos}]},
                        "velocity_counts": {"type": "integer", "minimum": 2},
                    },
                },
                "V": {"oneOf": [_expr, _file]},
                "truncation_radius": _pos,
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol": _pos,
                "gap": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["horizon"],
                    "properties": {
                        "horizon": _pos,
                        "probes": {"type": "array", "items": _expr, "minItems": 1},
                        "min_decades": _pos,
                        "max_dev": _pos,
                    },
                },
                "survival": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["x0", "horizon"],
                    "properties": {"x0": {"type": "array", "items": _num}, "horizon": _pos},
                },
            },
        },
        "rng": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "chunk_size": {"type": "integer", "minimum": 1},
                "threads": {"type": "integer", "minimum": 1},
            },
        },
        "simulate": {
            "type": "object",
            "additionalProperties": False,
            "required": ["x0", "dt", "T", "n_paths"],
            "properties": {
                "x0": {"type": "array", "items": _num},
                "dt": _pos,
                "T": _pos,
                "n_paths": {"type": "integer", "minimum": 1},
                "survival_points": {"type": "integer", "minimum": 2},
                "potentials": {"type": "object", "additionalProperties": _expr},
                "fleming_viot": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["n_particles"],
                    "properties": {"n_particles": {"type": "integer", "minimum": 2},
                                   "T": _pos, "burn_in": _pos},
                },
            },
        },
        "ldp": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "M": _pos,
                "tol": _pos,
                "reversible": {"type": "boolean"},
                "betas": {
                    "type": "object",
                    "additionalProperties": {
                        "oneOf": [
                            {"const": "qed"},
                            {"type": "object", "additionalProperties": False, "required": ["tilt"],
                             "properties": {"tilt": _expr}},
                            {"type": "object", "additionalProperties": False, "required": ["mix"],
                             "properties": {"mix": {"type": "number", "minimum": 0, "maximum": 1}}},
                            {"type": "object", "additionalProperties": False, "required": ["dirac"],
                             "properties": {"dirac": {"type": "array", "items": _num}}},
                            _file,
                        ]
                    },
                },
            },
        },
        "oracles": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: _expr for k in ("mu", "phi", "qed", "occupation", "terminal")},
        },
        "checks": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["metric", "op"],
                "properties": {
                    "metric": {"type": "string"},
                    "op": {"enum": ["abs", "rel", "le", "ge", "within_tolerance"]},
                    "expected": {"type": "number"},
                    "tol": {"type": "number", "minimum": 0},
                },
            },
        },
        "output": {"type": "string"},
    },
}


def parse_number(v) -> float:
    if isinstance(v, str):
        try:
            return float(sp.sympify(v, locals={}))
        except (sp.SympifyError, TypeError) as exc:
            raise ConfigError(f"not a number: {v!r}") from exc
    return float(v)


@dataclass
class RunConfig:
    """Validated configuration; ``data`` is the JSON document as parsed."""

    data: dict
    base_dir: Path

    # -- parsing -----------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict, base_dir=".") -> "RunConfig":
        data = copy.deepcopy(data)
        try:
            jsonschema.validate(data, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"{where}: {exc.message}") from None
        cfg = cls(data, Path(base_dir))
        cfg._check_files()
        cfg._check_semantics()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data, path.parent)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def dumps(self) -> str:
        return dumps(self.data)

    def _files(self):
        m = self.data["model"]
        if isinstance(m.get("V"), dict):
            yield m["V"]["file"]
        for spec in self.data.get("ldp", {}).get("betas", {}).values():
            if isinstance(spec, dict) and "file" in spec:
                yield spec["file"]

    def resolve(self, name: str) -> Path:
        p = Path(name)
        return p if p.is_absolute() else self.base_dir / p

    def _check_files(self):
        for f in self._files():
            if not self.resolve(f).is_file():
                raise ConfigError(f"referenced file {f} does not exist")

    def _check_semantics(self):
        proc = self.data["model"]["process"]
        kind = proc["kind"]
        allowed = {"overdamped": {"kind", "U", "drift", "scheme", "dim"},
                   "kinetic": {"kind", "U", "gamma", "dim"},
                   "stable": {"kind", "U", "alpha", "c_alpha", "dim"}}[kind]
        extra = set(proc) - allowed
        if extra:
            raise ConfigError(f"model/process: keys {sorted(extra)} do not apply to kind {kind!r}")
        if kind == "stable" and "alpha" not in proc:
            raise ConfigError("model/process: stable process needs alpha")
        if kind == "overdamped" and ("U" in proc) == ("drift" in proc):
            raise ConfigError("model/process: give exactly one of U or drift")
        if kind != "overdamped" and "U" not in proc:
            raise ConfigError("model/process: U is required")
        grid = self.data["model"]["grid"]
        if ("counts" in grid) == ("spacing" in grid):
            raise ConfigError("model/grid: give exactly one of counts or spacing")
        d = len(self.data["model"]["domain"]["bounds"])
        if "counts" in grid and len(grid["counts"]) != d:
            raise ConfigError("model/grid: one count per domain axis")
        if kind == "kinetic" and "velocity_counts" not in grid:
            raise ConfigError("model/grid: kinetic process needs velocity_counts")
        exp = self.data["experiment"]
        if exp == "simulate" and "simulate" not in self.data:
            raise ConfigError("simulate experiment needs a simulate section")
        if self.data.get("ldp", {}).get("reversible") and (kind != "overdamped" or "U" not in proc):
            raise ConfigError("ldp/reversible needs an overdamped process with a potential U")
        try:
            self.domain
            self.process
        except ValueError as exc:
            raise ConfigError(f"model: {exc}") from None

    # -- derived objects ---------------------------------------------------

    @property
    def experiment(self) -> str:
        return self.data["experiment"]

    @property
    def dim(self) -> int:
        return len(self.data["model"]["domain"]["bounds"])

    @property
    def seed(self) -> int:
        return int(self.data.get("rng", {}).get("seed", 0))

    @property
    def domain(self) -> DomainSpec:
        dm = self.data["model"]["domain"]
        bounds = [(parse_number(lo), parse_number(hi)) for lo, hi in dm["bounds"]]
        return DomainSpec(tuple(bounds), dm.get("mask"))

    @property
    def process(self):
        p = self.data["model"]["process"]
        d = self.dim
        if p["kind"] == "overdamped":
            if "U" in p:
                return OverdampedLangevin(potential=ScalarField(p["U"], d), scheme=p.get("scheme", "central"))
            return OverdampedLangevin(drift=VectorField(tuple(p["drift"])), scheme=p.get("scheme", "central"))
        if p["kind"] == "kinetic":
            return KineticLangevin(ScalarField(p["U"], d), float(p.get("gamma", 1.0)))
        return StableSDE(ScalarField(p["U"], d), float(p["alpha"]), p.get("c_alpha"))

    @property
    def grid(self) -> GridSpec:
        """Grid of the generator (phase space for kinetic processes)."""
        g = self.data["model"]["grid"]
        pos = self.position_grid
        if self.data["model"]["process"]["kind"] != "kinetic":
            return pos
        proc = self.process
        ph = kinetic_domain(self.domain, proc.gamma)
        counts = tuple(pos.counts) + (int(g["velocity_counts"]),) * self.dim
        return GridSpec(ph, counts)

    @property
    def position_grid(self) -> GridSpec:
        g = self.data["model"]["grid"]
        if "counts" in g:
            return GridSpec(self.domain, tuple(g["counts"]))
        return GridSpec.from_spacing(self.domain, g["spacing"])

    def operator(self):
        return build_generator(self.process, self.grid,
                               truncation_radius=self.data["model"].get("truncation_radius"))

    def potential_on(self, grid: GridSpec, expr=None) -> PotentialField:
        """The model potential V (or ``expr``) on the nodes of ``grid``."""
        spec = self.data["model"].get("V") if expr is None else expr
        if spec is None:
            return PotentialField.zero(grid.n)
        if isinstance(spec, dict):
            vals = np.loadtxt(self.resolve(spec["file"]), delimiter=",", ndmin=1)
            if vals.size != grid.n:
                raise ConfigError(f"{spec['file']}: {vals.size} values for {grid.n} interior nodes")
            return PotentialField(vals)
        d = self.dim
        f = ScalarField(spec, d)
        return PotentialField(f(grid.nodes[:, :d]))

    def inputs_hash(self) -> str:
        """SHA-256 of the canonical config without scheduling-only fields."""
        data = copy.deepcopy(self.data)
        data.get("rng", {}).pop("threads", None)
        data.pop("output", None)
        return hashlib.sha256(dumps(data).encode()).hexdigest()
