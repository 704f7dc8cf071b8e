"""Run configuration: JSON schema, nested dataclasses, and builders."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .discretize import build_grid
from .hum import HumConfig
from .model import ProblemSpec, Reaction, make_problem
from .weights import WeightSet, make_weights


class ConfigError(ValueError):
    """Invalid configuration; ``pointer`` is the JSON pointer of the offending key."""

    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


_POS = {"type": "number", "exclusiveMinimum": 0}
_AXES = {"type": "array", "minItems": 1, "maxItems": 2}
_FIELD = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["zero", "sine", "values"]},
        "amplitude": {"type": "number"},
        "modes": {**_AXES, "items": {"type": "integer", "minimum": 1}},
        "values": {"type": "array", "items": {"type": "number"}},
    },
}
_TENSOR = {"oneOf": [_POS, {"type": "array", "minItems": 2, "maxItems": 2, "items": _POS}]}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["domain", "time", "physics"],
    "properties": {
        "domain": {
            "type": "object",
            "additionalProperties": False,
            "required": ["dim", "extents", "n_cells"],
            "properties": {
                "dim": {"enum": [1, 2]},
                "extents": {**_AXES, "items": _POS},
                "n_cells": {**_AXES, "items": {"type": "integer", "minimum": 3}},
                "omega_lo": {**_AXES, "items": {"type": "number"}},
                "omega_hi": {**_AXES, "items": {"type": "number"}},
            },
        },
        "time": {
            "type": "object",
            "additionalProperties": False,
            "required": ["T", "n_steps"],
            "properties": {"T": _POS, "n_steps": {"type": "integer", "minimum": 2}},
        },
        "physics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "c_m": _POS,
                "mu": _POS,
                "epsilon": {"type": "number", "minimum": 0},
                "M_e": _TENSOR,
                "M_i": {"oneOf": [{"type": "null"}, _TENSOR]},
                "potential": {"type": "number"},
                "reaction": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["none", "lipschitz", "cubic"]},
                        "L": {"type": "number", "minimum": 0},
                        "c3": _POS,
                        "c1": {"type": "number", "minimum": 0},
                    },
                },
                "v0": _FIELD,
                "ue0": _FIELD,
            },
        },
        "hum": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "delta": _POS,
                "mode": {"enum": ["plain", "weighted"]},
                "max_iters": {"type": "integer", "minimum": 1},
                "gtol": _POS,
                "ftol": {"type": "number", "minimum": 0},
                "window": {"type": "integer", "minimum": 1},
                "power_iters": {"type": "integer", "minimum": 1},
                "q": {"type": "number", "exclusiveMinimum": 1},
                "kappa": {"type": "number", "minimum": 1},
                "outer_tol": _POS,
                "max_outer": {"type": "integer", "minimum": 1},
            },
        },
        "weights": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "m": {"type": "number", "exclusiveMinimum": 1},
                "s0": _POS,
                "lam": {"oneOf": [{"type": "null"}, _POS]},
                "center": {"oneOf": [{"type": "null"}, {**_AXES, "items": {"type": "number"}}]},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eps_list": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0}},
                "observability": {"type": "boolean"},
                "certificates": {"type": "boolean"},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string", "minLength": 1}},
        },
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
    },
}


@dataclass
class FieldConfig:
    kind: str = "zero"
    amplitude: float = 1.0
    modes: list = field(default_factory=lambda: [1])
    values: list | None = None


@dataclass
class DomainConfig:
    dim: int = 1
    extents: list = field(default_factory=lambda: [1.0])
    n_cells: list = field(default_factory=lambda: [32])
    omega_lo: list | None = None
    omega_hi: list | None = None


@dataclass
class TimeConfig:
    T: float = 1.0
    n_steps: int = 64


@dataclass
class ReactionConfig:
    kind: str = "none"
    L: float = 1.0
    c3: float = 1.0
    c1: float = 0.0


@dataclass
class PhysicsConfig:
    c_m: float = 1.0
    mu: float = 1.0
    epsilon: float = 1e-2
    M_e: float | list = 1.0
    M_i: float | list | None = None
    potential: float = 0.0
    reaction: ReactionConfig = field(default_factory=ReactionConfig)
    v0: FieldConfig = field(default_factory=lambda: FieldConfig("sine", 1.0, [1]))
    ue0: FieldConfig = field(default_factory=lambda: FieldConfig("sine", 0.5, [2]))


@dataclass
class HumSection:
    delta: float = 1e-3
    mode: str = "plain"
    max_iters: int = 20000
    gtol: float = 1e-2
    ftol: float = 0.0
    window: int = 200
    power_iters: int = 10
    q: float = 4.0
    kappa: float = 1.1
    outer_tol: float = 1e-8
    max_outer: int = 50


@dataclass
class WeightsConfig:
    m: float = 2.0
    s0: float = 1.0
    lam: float | None = None
    center: list | None = None


@dataclass
class SweepConfig:
    eps_list: list = field(default_factory=lambda: [1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 0.0])
    observability: bool = True
    certificates: bool = True


@dataclass
class OutputConfig:
    dir: str = "out"


@dataclass
class RunConfig:
    domain: DomainConfig
    time: TimeConfig
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    hum: HumSection = field(default_factory=HumSection)
    weights: WeightsConfig = field(default_factory=WeightsConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0

    # builders --------------------------------------------------------------
    def build_problem(self) -> ProblemSpec:
        d, ph = self.domain, self.physics
        grid = build_grid(d.dim, d.extents, d.n_cells)
        lo = d.omega_lo or [0.3 * L for L in d.extents]
        hi = d.omega_hi or [0.7 * L for L in d.extents]
        M_e = tuple(ph.M_e) if isinstance(ph.M_e, list) else ph.M_e
        M_i = tuple(ph.M_i) if isinstance(ph.M_i, list) else ph.M_i
        return make_problem(grid, c_m=ph.c_m, mu=ph.mu, epsilon=ph.epsilon, M_e=M_e, M_i=M_i,
                            omega=(lo, hi), T=self.time.T, n_steps=self.time.n_steps,
                            v0=_field_values(ph.v0, grid), ue0=_field_values(ph.ue0, grid))

    def build_reaction(self) -> Reaction:
        r = self.physics.reaction
        params = {"none": {}, "lipschitz": {"L": r.L}, "cubic": {"c3": r.c3, "c1": r.c1}}[r.kind]
        return Reaction(r.kind, params)

    def build_hum(self) -> HumConfig:
        h = self.hum
        return HumConfig(delta=h.delta, mode=h.mode, max_iters=h.max_iters, gtol=h.gtol, ftol=h.ftol,
                         window=h.window, power_iters=h.power_iters, q=h.q, kappa=h.kappa)

    def build_weights(self, problem: ProblemSpec, a_inf_norm: float | None = None) -> WeightSet:
        w = self.weights
        center = w.center if w.center is not None else problem.grid.coords[problem.omega].mean(axis=0)
        a_inf = abs(self.physics.potential) if a_inf_norm is None else a_inf_norm
        return make_weights(problem.grid, problem.T, center, m=w.m, s0=w.s0, a_inf_norm=a_inf, lam=w.lam)

    def potential(self):
        return None if self.physics.potential == 0 else self.physics.potential


def _field_values(fc: FieldConfig, grid) -> np.ndarray:
    if fc.kind == "zero":
        return np.zeros(grid.n_nodes)
    if fc.kind == "values":
        vals = np.asarray(fc.values, dtype=float)
        if vals.shape != (grid.n_nodes,):
            raise ConfigError("/physics", f"field needs {grid.n_nodes} values, got {vals.size}")
        return vals
    modes = list(fc.modes) + [1] * (grid.dim - len(fc.modes))
    out = np.full(grid.n_nodes, float(fc.amplitude))
    for k in range(grid.dim):
        out *= np.sin(modes[k] * np.pi * grid.coords[:, k] / grid.extents[k])
    return out


_SECTIONS = {"domain": DomainConfig, "time": TimeConfig, "hum": HumSection, "weights": WeightsConfig,
             "sweep": SweepConfig, "output": OutputConfig}


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path) if path else ""


def _message(err: jsonschema.ValidationError) -> str:
    if err.validator == "exclusiveMinimum":
        return f"must be > {err.validator_value}, got {err.instance!r}"
    if err.validator == "minimum":
        return f"must be >= {err.validator_value}, got {err.instance!r}"
    if err.validator == "additionalProperties":
        return f"unknown key ({err.message})"
    return err.message


def validate_document(doc: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    err = jsonschema.exceptions.best_match(validator.iter_errors(doc))
    if err is not None:
        raise ConfigError(_pointer(err.absolute_path), _message(err))
    d = doc["domain"]
    dim = d["dim"]
    for key in ("extents", "n_cells", "omega_lo", "omega_hi"):
        if key in d and len(d[key]) != dim:
            raise ConfigError(f"/domain/{key}", f"needs {dim} entries")
    center = doc.get("weights", {}).get("center")
    if center is not None and len(center) != dim:
        raise ConfigError("/weights/center", f"needs {dim} entries")


def config_from_dict(doc: dict) -> RunConfig:
    validate_document(doc)
    kw = {name: cls(**doc.get(name, {})) for name, cls in _SECTIONS.items()}
    ph = dict(doc.get("physics", {}))
    if "reaction" in ph:
        ph["reaction"] = ReactionConfig(**ph["reaction"])
    for key in ("v0", "ue0"):
        if key in ph:
            ph[key] = FieldConfig(**ph[key])
    for key in ("M_e", "M_i"):
        if isinstance(ph.get(key), list):
            ph[key] = [float(v) for v in ph[key]]
    cfg = RunConfig(physics=PhysicsConfig(**ph), seed=int(doc.get("seed", 0)), **kw)
    if cfg.domain.omega_lo is not None and cfg.domain.omega_hi is not None:
        if any(lo >= hi for lo, hi in zip(cfg.domain.omega_lo, cfg.domain.omega_hi)):
            raise ConfigError("/domain/omega_lo", "omega_lo must be below omega_hi")
    return cfg


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("", f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("", "top level must be an object")
    return config_from_dict(doc)


def serialize(config: RunConfig) -> dict:
    """Plain-JSON form with every default filled; ``config_from_dict`` inverts it."""
    doc = asdict(config)
    for key in ("v0", "ue0"):
        if doc["physics"][key]["values"] is None:
            del doc["physics"][key]["values"]
    for key in ("omega_lo", "omega_hi"):
        if doc["domain"][key] is None:
            del doc["domain"][key]
    return doc
