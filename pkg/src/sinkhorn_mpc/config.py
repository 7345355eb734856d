"""Experiment configuration files.

A config is a YAML mapping with a mandatory ``version`` field.  Targets and
initial states are either listed explicitly or produced by a seeded
generator, so every file resolves to one fixed experiment.  Resolution
replaces generators by the points they produce; serializing a resolved config
and parsing it again gives the same experiment and the same digest.

Minimal example::

    version: 1
    plant: {A: 1.0, B: 0.1}
    horizon: 10
    epsilon: 0.5
    steps: 500
    targets: {generator: grid, shape: [10], low: [-2.0], high: [2.0]}
    initial_states: {generator: uniform, low: -3.0, high: 3.0, seed: 0}
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .controller import SwarmConfig
from .errors import InputError
from .linear_mpc import LinearPlant, mpc_gains

SCHEMA_VERSION = 1

_matrix = {"oneOf": [{"type": "number"}, {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}]}
_vector = {"type": "array", "items": {"type": "number"}}
_points = {"type": "array", "items": {"oneOf": [{"type": "number"}, _vector]}, "minItems": 1}
_plant = {
    "type": "object",
    "properties": {"A": _matrix, "B": _matrix},
    "required": ["A", "B"],
    "additionalProperties": False,
}
_box_bound = {"oneOf": [{"type": "number"}, _vector]}

_point_set = {
    "type": "object",
    "required": ["generator"],
    "oneOf": [
        {
            "properties": {"generator": {"const": "explicit"}, "points": _points},
            "required": ["points"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "generator": {"const": "grid"},
                "shape": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "low": _vector,
                "high": _vector,
            },
            "required": ["shape", "low", "high"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "generator": {"const": "circle"},
                "radius": {"type": "number", "exclusiveMinimum": 0},
                "center": _vector,
                "phase": {"type": "number"},
            },
            "required": ["radius"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "generator": {"enum": ["uniform", "random"]},
                "low": _box_bound,
                "high": _box_bound,
                "seed": {"type": "integer", "minimum": 0},
            },
            "required": ["low", "high", "seed"],
            "additionalProperties": False,
        },
    ],
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "Sinkhorn MPC experiment",
    "type": "object",
    "properties": {
        "version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "description": {"type": "string"},
        "n_agents": {"type": "integer", "minimum": 1},
        "plant": _plant,
        "plants": {"type": "array", "items": _plant, "minItems": 1},
        "horizon": {"type": "integer", "minimum": 1},
        "epsilon": {"type": "number", "exclusiveMinimum": 0},
        "steps": {"type": "integer", "minimum": 0},
        "sinkhorn_iters_per_tick": {"type": "integer", "minimum": 1},
        "alpha0": {"oneOf": [{"type": "null"}, {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}}]},
        "targets": _point_set,
        "initial_states": _point_set,
        "outputs": {
            "type": "object",
            "properties": {"csv": {"type": "string"}, "summary": {"type": "string"}},
            "additionalProperties": False,
        },
        "analysis": {
            "type": "object",
            "properties": {
                "nu": {"oneOf": [{"type": "null"}, {"type": "number"}, _vector]},
                "delta": {"oneOf": [{"type": "null"}, {"type": "number", "exclusiveMinimum": 0}]},
                "gamma": {"oneOf": [{"type": "null"}, {"type": "number", "exclusiveMinimum": 0}]},
                "epsilons": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                "radius": {"type": "number", "minimum": 0},
                "trials": {"type": "integer", "minimum": 1},
                "stability_steps": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "tol": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
    },
    "required": ["version", "horizon", "epsilon", "steps", "targets", "initial_states"],
    "oneOf": [{"required": ["plant"]}, {"required": ["plants"]}],
    "additionalProperties": False,
}

ANALYSIS_DEFAULTS = {
    "nu": None,
    "delta": None,
    "gamma": None,
    "epsilons": [1.0, 0.5, 0.2, 0.1, 0.05],
    "radius": 1e-3,
    "trials": 5,
    "stability_steps": 500,
    "seed": 0,
    "tol": 1e-12,
}
OUTPUT_DEFAULTS = {"csv": "trajectory.csv", "summary": "summary.json"}


class ConfigError(InputError):
    """Config file failed schema validation or could not be resolved."""


def _as_points(points, dim: int | None = None) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ConfigError(f"points must be a list of scalars or of vectors, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise ConfigError(f"points must have dimension {dim}, got {arr.shape[1]}")
    return arr


def generate_points(spec: dict, count: int | None, dim: int) -> np.ndarray:
    """Points described by a generator block; ``count`` is required for random and circle sets."""
    kind = spec["generator"]
    if kind == "explicit":
        pts = _as_points(spec["points"], dim)
    elif kind == "grid":
        shape, low, high = spec["shape"], spec["low"], spec["high"]
        if not len(shape) == len(low) == len(high) == dim:
            raise ConfigError(f"grid shape, low and high need {dim} entries each")
        axes = [np.linspace(lo, hi, s) for s, lo, hi in zip(shape, low, high)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
    elif kind == "circle":
        if dim != 2:
            raise ConfigError("circle generator needs a 2-D state")
        if count is None:
            raise ConfigError("circle generator needs n_agents")
        center = np.asarray(spec.get("center", [0.0, 0.0]), dtype=float)
        angles = spec.get("phase", 0.0) + 2 * np.pi * np.arange(count) / count
        pts = center + spec["radius"] * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    else:  # uniform / random box
        if count is None:
            raise ConfigError("random generator needs n_agents")
        rng = np.random.default_rng(spec["seed"])
        pts = rng.uniform(spec["low"], spec["high"], size=(count, dim))
    if count is not None and pts.shape[0] != count:
        raise ConfigError(f"{kind} generator produced {pts.shape[0]} points, expected {count}")
    return pts


@dataclass(eq=False)
class ExperimentConfig:
    """A parsed config with every generator resolved to concrete points."""

    plants: list[LinearPlant]
    horizon: int
    epsilon: float
    steps: int
    targets: np.ndarray
    initial_states: np.ndarray
    sinkhorn_iters_per_tick: int = 1
    alpha0: np.ndarray | None = None
    name: str = "experiment"
    description: str = ""
    analysis: dict = field(default_factory=lambda: dict(ANALYSIS_DEFAULTS))
    outputs: dict = field(default_factory=lambda: dict(OUTPUT_DEFAULTS))

    @property
    def n_agents(self) -> int:
        return self.targets.shape[0]

    @property
    def state_dim(self) -> int:
        return self.targets.shape[1]

    @property
    def shared_plant(self) -> bool:
        return all(p == self.plants[0] for p in self.plants)

    def swarm(self, epsilon: float | None = None) -> SwarmConfig:
        """Controller configuration, optionally at another ``epsilon``."""
        eps = self.epsilon if epsilon is None else epsilon
        if self.shared_plant:
            return SwarmConfig.homogeneous(
                self.plants[0], self.targets, eps, self.horizon,
                sinkhorn_iters_per_tick=self.sinkhorn_iters_per_tick, alpha0=self.alpha0,
            )
        gains = tuple(mpc_gains(p, self.horizon) for p in self.plants)
        return SwarmConfig(
            agents=gains, targets=self.targets, epsilon=eps,
            sinkhorn_iters_per_tick=self.sinkhorn_iters_per_tick, alpha0=self.alpha0,
        )

    def to_dict(self) -> dict:
        """Resolved form: explicit points, every default spelled out."""
        def plant_dict(p):
            return {"A": p.A.tolist(), "B": p.B.tolist()}

        out = {"version": SCHEMA_VERSION, "name": self.name}
        if self.description:
            out["description"] = self.description
        out["n_agents"] = self.n_agents
        if self.shared_plant:
            out["plant"] = plant_dict(self.plants[0])
        else:
            out["plants"] = [plant_dict(p) for p in self.plants]
        out.update(
            horizon=self.horizon,
            epsilon=self.epsilon,
            steps=self.steps,
            sinkhorn_iters_per_tick=self.sinkhorn_iters_per_tick,
            alpha0=None if self.alpha0 is None else self.alpha0.tolist(),
            targets={"generator": "explicit", "points": self.targets.tolist()},
            initial_states={"generator": "explicit", "points": self.initial_states.tolist()},
            outputs=dict(self.outputs),
            analysis=copy.deepcopy(self.analysis),
        )
        return out

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON of the resolved config."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def validate(raw) -> None:
    """Raise :class:`ConfigError` listing every schema violation."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"  {'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError("invalid config:\n" + "\n".join(lines))


def from_dict(raw: dict) -> ExperimentConfig:
    validate(raw)
    plant_specs = raw["plants"] if "plants" in raw else [raw["plant"]]
    try:
        plants = [LinearPlant(p["A"], p["B"]) for p in plant_specs]
    except InputError as exc:
        raise ConfigError(f"bad plant: {exc}") from exc
    dim = plants[0].n
    count = raw.get("n_agents")
    if "plants" in raw:
        if count is not None and count != len(plants):
            raise ConfigError(f"n_agents={count} but {len(plants)} plants given")
        count = len(plants)
    targets = generate_points(raw["targets"], count, dim)
    count = targets.shape[0]
    if len(plants) == 1:
        plants = plants * count
    elif len(plants) != count:
        raise ConfigError(f"{len(plants)} plants for {count} targets")
    x0 = generate_points(raw["initial_states"], count, dim)
    alpha0 = raw.get("alpha0")
    if alpha0 is not None:
        alpha0 = np.asarray(alpha0, dtype=float)
        if alpha0.shape != (count,):
            raise ConfigError(f"alpha0 needs {count} entries")
    analysis = dict(ANALYSIS_DEFAULTS)
    analysis.update(raw.get("analysis", {}))
    outputs = dict(OUTPUT_DEFAULTS)
    outputs.update(raw.get("outputs", {}))
    return ExperimentConfig(
        plants=plants,
        horizon=raw["horizon"],
        epsilon=float(raw["epsilon"]),
        steps=raw["steps"],
        targets=targets,
        initial_states=x0,
        sinkhorn_iters_per_tick=raw.get("sinkhorn_iters_per_tick", 1),
        alpha0=alpha0,
        name=raw.get("name", "experiment"),
        description=raw.get("description", ""),
        analysis=analysis,
        outputs=outputs,
    )


def loads(text: str) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    return from_dict(raw)


def load(path) -> ExperimentConfig:
    return loads(Path(path).read_text())


PRESETS = ("fig1", "fig2", "equilibrium3", "stability10")


def load_preset(name: str) -> ExperimentConfig:
    """One of the configs shipped with the package (see :data:`PRESETS`)."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return loads(preset_text(name))


def preset_text(name: str) -> str:
    return resources.files("sinkhorn_mpc.presets").joinpath(f"{name}.yaml").read_text()
