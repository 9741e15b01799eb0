"""Experiment configuration: JSON schema, dataclasses and load-time validation.

Errors carry a JSON pointer to the offending field, e.g. ``/run/test_probs/1``.
"""
from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .belief_space import DISTANCE_MODES, PlayerBeliefs
from .dynamics import Resampler, RunConfig
from .game_core import Game, UtilityTransform
from .hypothesis_testing import DEFAULT_MAX_T

_prob_open = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}

SCHEMA = {
    "type": "object",
    "required": ["game", "parameters"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "game": {
            "type": "object",
            "required": ["payoffs"],
            "additionalProperties": False,
            "properties": {
                "players": {"type": "array", "items": {"type": "string"}, "minItems": 2},
                "actions": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                    "minItems": 2,
                },
                "payoffs": {"type": "array", "minItems": 1},
            },
        },
        "parameters": {
            "type": "object",
            "required": ["sigma", "tau", "M"],
            "additionalProperties": False,
            "properties": {
                "sigma": {"type": "number", "exclusiveMinimum": 0},
                "tau": {"type": "number", "exclusiveMinimum": 0},
                "M": {"type": "integer", "minimum": 1},
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
                "distance_mode": {"enum": list(DISTANCE_MODES)},
            },
        },
        "transforms": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["kind"],
                "additionalProperties": False,
                "properties": {
                    "kind": {"enum": ["identity", "affine", "table"]},
                    "scale": {"type": "number", "exclusiveMinimum": 0},
                    "shift": {"type": "number"},
                    "breakpoints": {"type": "array", "items": {"type": "number"}, "minItems": 2},
                    "values": {"type": "array", "items": {"type": "number"}, "minItems": 2},
                },
            },
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "xi": _prob_open,
                "xi_grid": {"type": "array", "items": _prob_open, "minItems": 2},
                "test_probs": {"type": "array", "items": _prob_open},
                "resampler": {
                    "type": "object",
                    "required": ["kind"],
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["uniform", "weighted"]},
                        "floor": {"type": "number", "exclusiveMinimum": 0},
                        "weights": {"type": "array"},
                    },
                },
                "epochs": {"type": "integer", "minimum": 0},
                "epoch_length": {"type": ["integer", "null"], "minimum": 1},
                "max_epoch_length": {"type": "integer", "minimum": 1},
                "u_bar": {"type": ["number", "null"]},
                "seed": {"type": "integer", "minimum": 0},
                "initial": {
                    "oneOf": [
                        {"enum": ["uniform", "stationary"]},
                        {"type": "integer", "minimum": 0},
                        {"type": "array", "items": {"type": "integer", "minimum": 0}},
                    ]
                },
                "replications": {"type": "integer", "minimum": 1},
                "simulate_in_sweep": {"type": "boolean"},
                "calibration_trials": {"type": "integer", "minimum": 100},
            },
        },
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string"},
                "formats": {"type": "array", "items": {"enum": ["json", "csv", "ndjson"]}},
            },
        },
    },
}


class ConfigError(ValueError):
    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer
        self.message = message


def _drop_none(d):
    if isinstance(d, dict):
        return {k: _drop_none(v) for k, v in d.items() if v is not None}
    return d


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


@dataclass
class GameSpec:
    payoffs: list
    players: list | None = None
    actions: list | None = None


@dataclass
class Parameters:
    sigma: float
    tau: float
    M: int
    epsilon: float = 0.5
    distance_mode: str = "joint_product"


@dataclass
class RunSpec:
    xi: float = 0.05
    xi_grid: list | None = None
    test_probs: list | None = None
    resampler: dict = field(default_factory=lambda: {"kind": "uniform"})
    epochs: int = 1000
    epoch_length: int | None = None
    max_epoch_length: int = DEFAULT_MAX_T
    u_bar: float | None = None
    seed: int = 0
    initial: object = "stationary"
    replications: int = 1
    simulate_in_sweep: bool = False
    calibration_trials: int = 2000


@dataclass
class OutputSpec:
    directory: str = "out"
    formats: list = field(default_factory=lambda: ["json", "csv", "ndjson"])


@dataclass
class ExperimentConfig:
    game: GameSpec
    parameters: Parameters
    transforms: list = field(default_factory=list)
    run: RunSpec = field(default_factory=RunSpec)
    outputs: OutputSpec = field(default_factory=OutputSpec)
    name: str = "experiment"
    description: str = ""

    def to_dict(self) -> dict:
        return _drop_none(asdict(self))

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = copy.deepcopy(raw)
        validate_raw(raw)
        cfg = cls(
            game=GameSpec(**raw["game"]),
            parameters=Parameters(**raw["parameters"]),
            transforms=raw.get("transforms", []),
            run=RunSpec(**raw.get("run", {})),
            outputs=OutputSpec(**raw.get("outputs", {})),
            name=raw.get("name", "experiment"),
            description=raw.get("description", ""),
        )
        cfg._check_semantics()
        return cfg

    def build_game(self) -> Game:
        arr = np.array(self.game.payoffs, dtype=float)
        return Game(np.moveaxis(arr, -1, 0), self.game.actions, self.game.players)

    def build_transforms(self) -> tuple:
        n = self.build_game().player_count
        if not self.transforms:
            return (UtilityTransform(),) * n
        return tuple(UtilityTransform.from_dict(t) for t in self.transforms)

    def test_probs(self, n: int) -> tuple:
        return tuple(self.run.test_probs) if self.run.test_probs else (0.5,) * n

    def run_config(self, xi: float | None = None, seed: int | None = None) -> RunConfig:
        game = self.build_game()
        p = self.parameters
        return RunConfig(
            xi=self.run.xi if xi is None else xi,
            test_probs=self.test_probs(game.player_count),
            transforms=self.build_transforms(),
            sigma=p.sigma, tau=p.tau, M=p.M,
            epochs=self.run.epochs,
            epoch_length=self.run.epoch_length,
            max_epoch_length=self.run.max_epoch_length,
            u_bar_override=self.run.u_bar,
            resampler=Resampler.from_dict(self.run.resampler),
            seed=self.run.seed if seed is None else seed,
            distance_mode=p.distance_mode,
        )

    def xi_grid(self) -> list:
        return list(self.run.xi_grid) if self.run.xi_grid else [self.run.xi]

    def _check_semantics(self):
        try:
            arr = np.array(self.game.payoffs, dtype=float)
        except (ValueError, TypeError) as exc:
            raise ConfigError("/game/payoffs", f"payoff table is ragged or non-numeric ({exc})")
        if arr.ndim < 3 or arr.shape[-1] != arr.ndim - 1:
            raise ConfigError(
                "/game/payoffs",
                f"expected shape (|A_1|, ..., |A_n|, n) with one payoff per player, got {arr.shape}",
            )
        if not np.all(np.isfinite(arr)):
            raise ConfigError("/game/payoffs", "payoffs must be finite")
        n = arr.shape[-1]
        if self.game.actions is not None:
            if len(self.game.actions) != n:
                raise ConfigError("/game/actions", f"need {n} action lists, got {len(self.game.actions)}")
            for i, (labels, k) in enumerate(zip(self.game.actions, arr.shape[:-1])):
                if len(labels) != k:
                    raise ConfigError(f"/game/actions/{i}", f"payoff table has {k} actions, labels list {len(labels)}")
        if self.game.players is not None and len(self.game.players) != n:
            raise ConfigError("/game/players", f"need {n} player names, got {len(self.game.players)}")
        if self.transforms and len(self.transforms) != n:
            raise ConfigError("/transforms", f"need {n} transforms, got {len(self.transforms)}")
        if self.run.test_probs is not None and len(self.run.test_probs) != n:
            raise ConfigError("/run/test_probs", f"need {n} test probabilities, got {len(self.run.test_probs)}")
        transforms = []
        for k, t in enumerate(self.transforms):
            try:
                transforms.append(UtilityTransform.from_dict(t))
            except (ValueError, KeyError) as exc:
                raise ConfigError(f"/transforms/{k}", str(exc))
        if self.run.initial not in ("uniform", "stationary") and isinstance(self.run.initial, list):
            if len(self.run.initial) != n:
                raise ConfigError("/run/initial", f"need {n} belief indices, got {len(self.run.initial)}")
        try:
            Resampler.from_dict(self.run.resampler)
        except ValueError as exc:
            raise ConfigError("/run/resampler", str(exc))

    def validate_transforms(self) -> None:
        """Check each transform is increasing on the payoff range and positive on
        the anticipated-utility range (the only values it is ever applied to)."""
        game = self.build_game()
        for i, f in enumerate(self.build_transforms()):
            lo, hi = game.payoff_range(i)
            ant = PlayerBeliefs(game, i, self.parameters.M, self.parameters.sigma).anticipated
            try:
                f.validate_on(lo, hi, positive_from=float(ant.min()))
            except ValueError as exc:
                raise ConfigError(f"/transforms/{i}" if self.transforms else "/transforms", str(exc))


def validate_raw(raw: dict) -> None:
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigError(_pointer(e.absolute_path), e.message)


def packaged_config_names() -> list[str]:
    root = resources.files("eht_lab") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def resolve_config_path(spec: str) -> Path:
    """A path on disk, else a packaged config by bare name or ``examples/<name>.json``."""
    p = Path(spec)
    if p.is_file():
        return p
    name = p.name[:-5] if p.name.endswith(".json") else p.name
    candidate = resources.files("eht_lab") / "configs" / f"{name}.json"
    if candidate.is_file():
        return Path(str(candidate))
    raise ConfigError("", f"config {spec!r} not found (packaged configs: {', '.join(packaged_config_names())})")


def load_config(spec) -> ExperimentConfig:
    path = resolve_config_path(os.fspath(spec))
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON in {path}: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("", "top level must be a JSON object")
    cfg = ExperimentConfig.from_dict(raw)
    cfg.validate_transforms()
    return cfg


def dump_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
