"""Scenario files: JSON descriptions of an experiment.

A scenario names a seed, a trial count, a tilt configuration and one section
per experiment kind.  Operators are given either explicitly (row-major
``[re, im]`` pairs) or by constructor name plus parameters.  Every field error
raises :class:`ScenarioError` naming the dotted path of the offending field.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import operators as ops
from . import rng as rngmod
from .risk import RiskError, TiltConfig


class ScenarioError(ValueError):
    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


@dataclass
class Scenario:
    name: str
    seed: int
    trials: int
    dimension: int = 2
    tilt: dict = field(default_factory=dict)
    backend: str = "oracle"
    sections: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"name": self.name, "seed": self.seed, "trials": self.trials,
               "dimension": self.dimension, "tilt": self.tilt, "backend": self.backend}
        out.update(copy.deepcopy(self.sections))
        return out

    def section(self, key: str) -> dict:
        if key not in self.sections:
            raise ScenarioError(key, "section missing from scenario")
        sec = self.sections[key]
        if not isinstance(sec, dict):
            raise ScenarioError(key, "section must be an object")
        return sec

    def tilt_config(self, **overrides) -> TiltConfig:
        data = dict(self.tilt)
        data.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return TiltConfig(**data)
        except TypeError as exc:
            raise ScenarioError("tilt", str(exc)) from None
        except RiskError as exc:
            raise ScenarioError("tilt", str(exc)) from None


_TOP = {"name", "seed", "trials", "dimension", "tilt", "backend"}


def scenario_from_dict(data) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("<root>", "scenario must be a JSON object")
    for key in ("name", "seed"):
        if key not in data:
            raise ScenarioError(key, "required field missing")
    name = data["name"]
    if not isinstance(name, str) or not name:
        raise ScenarioError("name", "must be a non-empty string")
    seed = data["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2 ** 64:
        raise ScenarioError("seed", "must be an unsigned 64-bit integer")
    trials = data.get("trials", 1)
    if not isinstance(trials, int) or isinstance(trials, bool) or trials < 1:
        raise ScenarioError("trials", "must be a positive integer")
    dim = data.get("dimension", 2)
    if not isinstance(dim, int) or not 1 <= dim <= ops.MAX_DIM:
        raise ScenarioError("dimension", f"must be an integer in [1, {ops.MAX_DIM}]")
    tilt = data.get("tilt", {})
    if not isinstance(tilt, dict):
        raise ScenarioError("tilt", "must be an object")
    backend = data.get("backend", "oracle")
    if backend not in ("oracle", "sampled"):
        raise ScenarioError("backend", "must be 'oracle' or 'sampled'")
    sections = {k: copy.deepcopy(v) for k, v in data.items() if k not in _TOP}
    return Scenario(name, seed, trials, dim, dict(tilt), backend, sections)


def load_scenario(path) -> Scenario:
    p = Path(path)
    if not p.exists():
        shipped = resources.files("qterm_lab") / "scenarios" / f"{path}.json"
        if shipped.is_file():
            return scenario_from_dict(json.loads(shipped.read_text()))
        raise ScenarioError("<path>", f"no scenario file at {path}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError("<root>", f"invalid JSON ({exc})") from None
    return scenario_from_dict(data)


def shipped_scenarios() -> list:
    root = resources.files("qterm_lab") / "scenarios"
    return sorted(f.name[:-5] for f in root.iterdir() if f.name.endswith(".json"))


# -- field helpers -----------------------------------------------------------------

def get(sec: dict, path: str, key: str, kind=float, default=..., check=None):
    if key not in sec:
        if default is ...:
            raise ScenarioError(f"{path}.{key}", "required field missing")
        return default
    v = sec[key]
    try:
        if kind is int:
            if isinstance(v, bool) or int(v) != v:
                raise ValueError
            v = int(v)
        elif kind is float:
            if isinstance(v, bool):
                raise ValueError
            v = float(v)
        elif kind is list:
            if not isinstance(v, list):
                raise ValueError
        elif kind is str and not isinstance(v, str):
            raise ValueError
    except (TypeError, ValueError):
        raise ScenarioError(f"{path}.{key}", f"expected {kind.__name__}") from None
    if check is not None and not check(v):
        raise ScenarioError(f"{path}.{key}", f"value {v!r} out of range")
    return v


def float_list(sec: dict, path: str, key: str, default=..., lo=None, hi=None) -> list:
    raw = get(sec, path, key, list, default)
    try:
        vals = [float(x) for x in raw]
    except (TypeError, ValueError):
        raise ScenarioError(f"{path}.{key}", "expected a list of numbers") from None
    if not vals:
        raise ScenarioError(f"{path}.{key}", "list is empty")
    for v in vals:
        if (lo is not None and v < lo) or (hi is not None and v > hi):
            raise ScenarioError(f"{path}.{key}", f"value {v!r} out of range")
    return vals


_CONSTRUCTORS = {
    "random_pure_state": lambda d, g, p: ops.random_pure_state(d, g),
    "random_mixed_state": lambda d, g, p: ops.random_mixed_state(d, g, p.get("rank")),
    "maximally_mixed": lambda d, g, p: ops.DensityOperator(np.eye(d) / d),
    "basis_state": lambda d, g, p: ops.DensityOperator(np.diag(np.eye(d)[p.get("index", 0)])),
    "random_hermitian": lambda d, g, p: ops.random_hermitian(d, g, p.get("scale", 1.0)),
    "diagonal": lambda d, g, p: ops.HermitianOperator(np.diag(p["values"])),
    "random_rank_projector": lambda d, g, p: ops.random_rank_projector(d, p.get("rank", 1), g),
}


def build_operator(spec, path: str, dim: int, rng, kind: str):
    """Explicit ``{"matrix": ...}`` or ``{"constructor": name, ...}``."""
    wrap = {"state": ops.DensityOperator, "hermitian": ops.HermitianOperator,
            "projector": ops.Projector}[kind]
    if not isinstance(spec, dict):
        raise ScenarioError(path, "operator must be an object")
    try:
        if "matrix" in spec:
            m = ops.matrix_from_json(spec["matrix"])
            if m.shape[0] != dim:
                raise ScenarioError(path + ".matrix", f"dimension {m.shape[0]} != scenario dimension {dim}")
            return wrap(m)
        name = spec.get("constructor")
        if name not in _CONSTRUCTORS:
            raise ScenarioError(path + ".constructor", f"unknown constructor {name!r}")
        return wrap(_CONSTRUCTORS[name](dim, rng, spec).matrix)
    except ops.OperatorError as exc:
        raise ScenarioError(path, str(exc)) from None
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(path, f"bad operator parameters ({exc})") from None


def scenario_rng(sc: Scenario, index: int = 0):
    return rngmod.stream(sc.seed, rngmod.SCENARIO, index)
