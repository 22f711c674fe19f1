"""Scenario configuration: TOML in, JSON out.

A scenario fully determines a run given the code version: world generator
parameters, vehicle parameters, planner / tracker / training settings,
mission spec, and the master seed.
"""

import dataclasses
import json

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from dataclasses import dataclass, field
from pathlib import Path

from .dynamics import VehicleParams, VehicleState
from .planner import PlannerConfig
from .sim_world import BaselineConfig, MissionSpec
from .tracker import MppiConfig
from .world import DisturbanceParams, WorldGenParams, DEFAULT_DISTURBANCES
from .terrain import TraversabilityWeights


@dataclass(frozen=True)
class TrainConfig:
    duration: float = 150.0      # seconds of scripted driving
    n_train: int = 120           # subsample per class before fitting
    iters: int = 60
    min_samples: int = 50


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    world: WorldGenParams = field(default_factory=WorldGenParams)
    weights: TraversabilityWeights = field(default_factory=TraversabilityWeights)
    disturbances: dict = field(default_factory=lambda: dict(DEFAULT_DISTURBANCES))
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    mppi: MppiConfig = field(default_factory=MppiConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    start: tuple[float, float, float] = (4.0, 13.0, 0.0)   # x, y, yaw
    start_speed: float = 1.0
    goal: tuple[float, float] = (56.0, 13.0)
    goal_radius: float = 1.5
    time_limit: float = 90.0

    def mission(self) -> MissionSpec:
        return MissionSpec(
            start=VehicleState(self.start[0], self.start[1], self.start[2],
                               v_x_b=self.start_speed),
            goal=self.goal,
            goal_radius=self.goal_radius,
            time_limit=self.time_limit,
        )

    def to_dict(self) -> dict:
        def conv(v):
            if dataclasses.is_dataclass(v):
                return {k: conv(x) for k, x in dataclasses.asdict(v).items()}
            if isinstance(v, dict):
                return {k: conv(x) for k, x in v.items()}
            if isinstance(v, tuple):
                return list(v)
            return v
        return {f.name: conv(getattr(self, f.name)) for f in dataclasses.fields(self)}

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def _tuplify(v):
    return tuple(_tuplify(x) for x in v) if isinstance(v, list) else v


def _build(cls, data: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {f.name: _tuplify(data[f.name])
              for f in dataclasses.fields(cls) if f.name in data}
    return cls(**kwargs)


def from_dict(data: dict) -> ScenarioConfig:
    kwargs = {}
    sections = {
        "world": WorldGenParams,
        "weights": TraversabilityWeights,
        "vehicle": VehicleParams,
        "planner": PlannerConfig,
        "mppi": MppiConfig,
        "baseline": BaselineConfig,
        "train": TrainConfig,
    }
    for key, cls in sections.items():
        if key in data:
            kwargs[key] = _build(cls, data[key])
    if "disturbances" in data:
        kwargs["disturbances"] = {
            lbl: _build(DisturbanceParams, d) for lbl, d in data["disturbances"].items()
        }
    for key in ("seed", "start", "start_speed", "goal", "goal_radius", "time_limit"):
        if key in data:
            kwargs[key] = _tuplify(data[key])
    extras = set(data) - set(sections) - {"disturbances", "seed", "start", "start_speed",
                                          "goal", "goal_radius", "time_limit"}
    if extras:
        raise ValueError(f"unknown scenario keys: {sorted(extras)}")
    return ScenarioConfig(**kwargs)


def load(path) -> ScenarioConfig:
    with open(path, "rb") as f:
        return from_dict(tomllib.load(f))
