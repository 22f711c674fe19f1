"""Terrain world container and the synthetic scenario generator.

A TerrainWorld bundles co-registered elevation / terrain-type /
geometric-traversability grids with the ground-truth disturbance parameters
of each terrain class. Obstacles are baked into the elevation layer (step
height drives their cost) and kept as descriptors for collision checking.
"""

from dataclasses import dataclass, field

import numpy as np

from .terrain import (
    GridMap2D,
    TerrainTypeMap,
    TraversabilityWeights,
    geometric_traversability,
    roll_pitch_from_normal,
    surface_normal,
)

GRASS = "grass"
MUD = "mud"


@dataclass(frozen=True)
class DisturbanceParams:
    """Ground-truth slip model of one terrain class (simulator only).

    k_vy converts lateral-force demand into lateral velocity error, k_vx is
    the longitudinal efficiency, k_omega scales yaw-acceleration error; the
    n_* terms are per-step noise intensities (std per sqrt(second)).
    """

    k_vy: float = 0.0
    k_vx: float = 1.0
    k_omega: float = 0.0
    n_vx: float = 0.0
    n_vy: float = 0.0
    n_omega: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.k_vx <= 1.0):
            raise ValueError("k_vx must be in (0, 1]")
        if min(self.n_vx, self.n_vy, self.n_omega) < 0:
            raise ValueError("noise std must be >= 0")


@dataclass(frozen=True)
class Obstacle:
    x: float
    y: float
    radius: float
    height: float


@dataclass(frozen=True)
class TerrainWorld:
    elevation: GridMap2D
    terrain_types: TerrainTypeMap
    traversability: GridMap2D
    weights: TraversabilityWeights
    disturbances: dict[str, DisturbanceParams]
    obstacles: tuple[Obstacle, ...] = ()

    def __post_init__(self):
        for m in (self.terrain_types, self.traversability):
            if (m.resolution != self.elevation.resolution
                    or m.origin != self.elevation.origin
                    or (m.height, m.width) != (self.elevation.height, self.elevation.width)):
                raise ValueError("world grids must share geometry")
        missing = [l for l in self.terrain_types.labels if l not in self.disturbances]
        if missing:
            raise ValueError(f"no disturbance parameters for terrain classes {missing}")
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    @property
    def t_max(self) -> float:
        return self.weights.t_max

    def attitude_at(self, x, y, yaw, clip: bool = False):
        """Terrain-consistent (roll, pitch) arrays at world (x, y)."""
        n = surface_normal(self.elevation, x, y, clip=clip)
        return roll_pitch_from_normal(n, yaw)

    def label_at(self, x, y) -> str:
        return self.terrain_types.label_at(x, y)


DEFAULT_DISTURBANCES = {
    # Calibration targets for the synthetic ground truth, not source values.
    GRASS: DisturbanceParams(k_vy=0.05, k_vx=0.97, k_omega=0.02,
                             n_vx=0.01, n_vy=0.02, n_omega=0.01),
    MUD: DisturbanceParams(k_vy=0.9, k_vx=0.7, k_omega=0.6,
                           n_vx=0.05, n_vy=0.08, n_omega=0.05),
}


@dataclass(frozen=True)
class WorldGenParams:
    """Hill + mud patch + scattered obstacles, deterministic per seed."""

    size_x: float = 60.0
    size_y: float = 40.0
    resolution: float = 0.5
    hill_height: float = 3.0
    hill_center: tuple[float, float] = (30.0, 30.0)
    hill_sigma: float = 8.0
    mud_center: tuple[float, float] = (30.0, 13.0)
    mud_radii: tuple[float, float] = (13.0, 8.0)
    n_obstacles: int = 8
    obstacle_radius: float = 0.6
    obstacle_height: float = 0.8
    obstacle_region: tuple[float, float, float, float] = (14.0, 46.0, 6.0, 24.0)
    clearance: float = 4.0
    clearance_points: tuple[tuple[float, float], ...] = ((4.0, 13.0), (56.0, 13.0))
    roughness_amp: float = 0.0


def make_world(
    params: WorldGenParams = WorldGenParams(),
    seed: int = 0,
    weights: TraversabilityWeights = TraversabilityWeights(),
    disturbances: dict[str, DisturbanceParams] | None = None,
) -> TerrainWorld:
    rng = np.random.default_rng(seed)
    res = params.resolution
    width = int(round(params.size_x / res))
    height = int(round(params.size_y / res))
    xs = np.arange(width) * res
    ys = np.arange(height) * res
    X, Y = np.meshgrid(xs, ys)

    elev = params.hill_height * np.exp(
        -((X - params.hill_center[0]) ** 2 + (Y - params.hill_center[1]) ** 2)
        / (2 * params.hill_sigma ** 2)
    )
    if params.roughness_amp > 0:
        elev = elev + params.roughness_amp * rng.standard_normal(elev.shape)

    labels = (GRASS, MUD)
    tmap = np.zeros((height, width), dtype=np.uint8)
    mud_mask = (
        ((X - params.mud_center[0]) / params.mud_radii[0]) ** 2
        + ((Y - params.mud_center[1]) / params.mud_radii[1]) ** 2
    ) <= 1.0
    tmap[mud_mask] = 1

    obstacles = []
    x0, x1, y0, y1 = params.obstacle_region
    guard = 0
    while len(obstacles) < params.n_obstacles and guard < 10000:
        guard += 1
        ox = rng.uniform(x0, x1)
        oy = rng.uniform(y0, y1)
        if any(np.hypot(ox - px, oy - py) < params.clearance
               for px, py in params.clearance_points):
            continue
        obstacles.append(Obstacle(ox, oy, params.obstacle_radius, params.obstacle_height))

    for ob in obstacles:
        mask = (X - ob.x) ** 2 + (Y - ob.y) ** 2 <= ob.radius ** 2
        elev[mask] += ob.height

    elevation = GridMap2D(resolution=res, origin=(0.0, 0.0), values=elev)
    terrain_types = TerrainTypeMap(resolution=res, origin=(0.0, 0.0),
                                   labels=labels, values=tmap)
    trav = geometric_traversability(elevation, weights)
    return TerrainWorld(
        elevation=elevation,
        terrain_types=terrain_types,
        traversability=trav,
        weights=weights,
        disturbances=dict(disturbances or DEFAULT_DISTURBANCES),
        obstacles=tuple(obstacles),
    )


def flat_world(
    size_x: float = 60.0,
    size_y: float = 40.0,
    resolution: float = 0.5,
    disturbances: dict[str, DisturbanceParams] | None = None,
    mud_band: tuple[float, float] | None = None,
) -> TerrainWorld:
    """All-zero elevation; optional mud band y in [lo, hi). Test convenience."""
    width = int(round(size_x / resolution))
    height = int(round(size_y / resolution))
    elev = GridMap2D(resolution, (0.0, 0.0), np.zeros((height, width)))
    tmap = np.zeros((height, width), dtype=np.uint8)
    if mud_band is not None:
        ys = np.arange(height) * resolution
        rows = (ys >= mud_band[0]) & (ys < mud_band[1])
        tmap[rows, :] = 1
    weights = TraversabilityWeights()
    terrain_types = TerrainTypeMap(resolution, (0.0, 0.0), (GRASS, MUD), tmap)
    return TerrainWorld(
        elevation=elev,
        terrain_types=terrain_types,
        traversability=geometric_traversability(elev, weights),
        weights=weights,
        disturbances=dict(disturbances or DEFAULT_DISTURBANCES),
    )
