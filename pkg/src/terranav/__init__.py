"""Uncertainty-aware off-road navigation on 3-D terrain.

Terrain grid maps and traversability costing, an extended dynamic bicycle
model, per-terrain Gaussian-process residual learning, predictive-path-
distribution planning with rollover filtering, MPPI tracking, and a
closed-loop synthetic simulator with baseline planners.
"""

from .dynamics import ControlInput, VehicleParams, VehicleState
from .gp import GpDataset, GpModel, GpRegistry
from .planner import PlannerConfig, PlanResult
from .sim_world import MissionSpec, TrialLog
from .terrain import Attitude, GridMap2D, TerrainTypeMap, TraversabilityWeights
from .tracker import MppiConfig, ReferencePath
from .world import DisturbanceParams, TerrainWorld, make_world

__all__ = [
    "Attitude", "ControlInput", "DisturbanceParams", "GpDataset", "GpModel",
    "GpRegistry", "GridMap2D", "MissionSpec", "MppiConfig", "PlanResult",
    "PlannerConfig", "ReferencePath", "TerrainTypeMap", "TerrainWorld",
    "TraversabilityWeights", "TrialLog", "VehicleParams", "VehicleState",
    "make_world",
]

__version__ = "0.1.0"
