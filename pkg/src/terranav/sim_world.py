"""Ground-truth closed-loop simulator.

Terrain-dependent "true" dynamics (nominal model plus per-class slip
disturbance and noise), scripted training-data collection, and mission
execution with outcome judging for the proposed stack and both baselines.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import dynamics, gp, planner, tracker
from .dynamics import ControlInput, VehicleParams, VehicleState
from .gp import GpDataset, GpRegistry
from .planner import PlannerConfig, UnreachableError
from .terrain import Attitude, GridMap2D
from .tracker import MppiConfig, ReferencePath
from .world import MUD, TerrainWorld

SIM_DT = 0.02
CTRL_PERIOD = 5       # sim steps between controller ticks (10 Hz)
PLAN_PERIOD = 17      # sim steps between planner ticks (~3 Hz)

STACKS = ("proposed", "baseline1", "baseline2")


@dataclass(frozen=True)
class MissionSpec:
    start: VehicleState
    goal: tuple[float, float]
    goal_radius: float = 1.5
    time_limit: float = 60.0
    rollover_limit: float = 1.0

    def __post_init__(self):
        if self.goal_radius <= 0 or self.time_limit <= 0:
            raise ValueError("goal radius and time limit must be > 0")


@dataclass
class TrialLog:
    times: np.ndarray        # (n,)
    states: np.ndarray       # (n, 6)
    commands: np.ndarray     # (n, 2)
    labels: list[str]        # terrain class under the vehicle, per row
    outcome: str             # success | collision | rollover | timeout
    detail: str
    path_length: float
    plan_count: int
    fallback_count: int
    # Wall-clock measurements; excluded from serialization so identical
    # seeds produce byte-identical logs.
    plan_times: list[float] = field(default_factory=list, repr=False)
    track_times: list[float] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "detail": self.detail,
            "path_length": self.path_length,
            "plan_count": self.plan_count,
            "fallback_count": self.fallback_count,
            "times": self.times.tolist(),
            "states": self.states.tolist(),
            "commands": self.commands.tolist(),
            "labels": self.labels,
        }

    def trajectory_rows(self):
        """CSV-ready rows: t, x, y, yaw, v_x, v_y, omega_z, steer, accel, terrain."""
        for i in range(len(self.times)):
            yield (
                self.times[i], *self.states[i], *self.commands[i], self.labels[i]
            )


vehicle_radius = dynamics.vehicle_radius


def true_step(
    state: VehicleState,
    u: ControlInput,
    world: TerrainWorld,
    p: VehicleParams,
    dt: float,
    rng: np.random.Generator,
) -> VehicleState:
    """Ground-truth propagation: nominal step plus terrain-class slip."""
    roll, pitch = world.attitude_at(state.x_w, state.y_w, state.yaw, clip=True)
    att = Attitude(float(roll), float(pitch), state.yaw)
    nominal = dynamics.step(state, u, att, p, dt)

    d = world.disturbances[world.label_at(state.x_w, state.y_w)]
    tf = dynamics.terrain_forces(state, u, att, p)
    omega_dot = float(dynamics.state_derivative(state, u, att, p)[5])
    # Slip cancels part of the demanded tire forces: k_vx is the fraction of
    # commanded acceleration that survives, k_vy / k_omega the fractions of
    # lateral force and yaw moment lost to the surface.
    dv_x = (d.k_vx - 1.0) * u.accel * dt
    dv_y = -d.k_vy * (tf.F_yf + tf.F_yr) / p.m * dt
    dw = -d.k_omega * omega_dot * dt
    noise = rng.standard_normal(3) * np.array([d.n_vx, d.n_vy, d.n_omega]) * np.sqrt(dt)
    return VehicleState(
        nominal.x_w,
        nominal.y_w,
        nominal.yaw,
        max(nominal.v_x_b + dv_x + noise[0], 0.0),
        nominal.v_y_b + dv_y + noise[1],
        nominal.omega_z_b + dw + noise[2],
    )


class SmoothedRandomPolicy:
    """Low-pass filtered uniform random inputs; joystick stand-in."""

    def __init__(self, p: VehicleParams, rng: np.random.Generator,
                 smoothing: float = 0.85, v_target: float = 2.5):
        self.p = p
        self.rng = rng
        self.smoothing = smoothing
        self.v_target = v_target
        self.u = np.zeros(2)

    def __call__(self, state: VehicleState) -> ControlInput:
        p = self.p
        target = np.array([
            self.rng.uniform(-p.delta_max, p.delta_max),
            self.rng.uniform(p.a_min, p.a_max),
        ])
        self.u = self.smoothing * self.u + (1 - self.smoothing) * target
        accel = self.u[1]
        # Keep the vehicle moving forward so slip dynamics get excited.
        if state.v_x_b < 0.5:
            accel = abs(accel) + 0.5
        elif state.v_x_b > self.v_target * 2:
            accel = -abs(accel)
        return ControlInput(
            float(np.clip(self.u[0], -p.delta_max, p.delta_max)),
            float(np.clip(accel, p.a_min, p.a_max)),
        )


def _random_interior_state(world: TerrainWorld, rng: np.random.Generator,
                           label: str | None = None) -> VehicleState:
    """Random interior pose; with `label`, rejection-sample onto that terrain
    class (falls back to anywhere after a bounded number of tries)."""
    ex, ey = world.elevation.extent
    for _ in range(200):
        x = rng.uniform(0.15 * ex, 0.85 * ex)
        y = rng.uniform(0.15 * ey, 0.85 * ey)
        if label is None or world.label_at(x, y) == label:
            break
    return VehicleState(
        x_w=x,
        y_w=y,
        yaw=rng.uniform(-np.pi, np.pi),
        v_x_b=rng.uniform(0.5, 2.0),
    )


def collect_training_data(
    world: TerrainWorld,
    p: VehicleParams,
    policy=None,
    duration: float = 120.0,
    rng: np.random.Generator | None = None,
    ctrl_dt: float = 0.1,
) -> dict[str, GpDataset]:
    """Drive the true dynamics and label one-step residuals per terrain class.

    The vehicle respawns at a random interior pose whenever it nears the map
    edge; residual pairs never straddle a respawn.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    policy = policy if policy is not None else SmoothedRandomPolicy(p, rng)
    substeps = max(int(round(ctrl_dt / SIM_DT)), 1)
    n_ticks = int(duration / ctrl_dt)
    # Rotate respawns through the terrain classes so every class gets coverage
    # even when the random walk would not wander there on its own.
    class_cycle = world.terrain_types.labels
    respawn_period = max(int(round(10.0 / ctrl_dt)), 1)  # forced respawn, ticks
    respawns = 0

    state = _random_interior_state(world, rng, class_cycle[0])
    segments = [[]]
    for tick in range(n_ticks):
        if (not world.elevation.contains(state.x_w, state.y_w, margin_cells=2.0)
                or (tick > 0 and tick % respawn_period == 0)):
            respawns += 1
            state = _random_interior_state(
                world, rng, class_cycle[respawns % len(class_cycle)])
            segments.append([])
        u = policy(state)
        roll, pitch = world.attitude_at(state.x_w, state.y_w, state.yaw, clip=True)
        segments[-1].append((state, u, Attitude(float(roll), float(pitch), state.yaw)))
        for _ in range(substeps):
            state = true_step(state, u, world, p, SIM_DT, rng)

    per_label: dict[str, list] = {lbl: ([], []) for lbl in world.terrain_types.labels}
    for seg in segments:
        if len(seg) < 2:
            continue
        data = gp.residual_labels(seg, p, ctrl_dt)
        for k in range(len(data)):
            s_k = seg[k][0]
            lbl = world.label_at(s_k.x_w, s_k.y_w)
            per_label[lbl][0].append(data.inputs[k])
            per_label[lbl][1].append(data.outputs[k])
    return {
        lbl: GpDataset(np.array(xs), np.array(ys))
        for lbl, (xs, ys) in per_label.items()
        if len(xs) > 0
    }


def _astar_reference(world: TerrainWorld, cost: GridMap2D, state: VehicleState,
                     goal, v_ref: float, untraversable: float, cost_gain: float) -> ReferencePath:
    start_cell = tuple(int(v) for v in cost.cell_index(state.x_w, state.y_w))
    goal_cell = tuple(int(v) for v in cost.cell_index(goal[0], goal[1]))
    cells = planner.astar_plan(cost, start_cell, goal_cell,
                               untraversable=untraversable, cost_gain=cost_gain)
    xy = np.array([cost.cell_center(ix, iy) for ix, iy in cells], dtype=float)
    if xy.shape[0] == 1:
        xy = np.vstack([xy, [goal]])
    yaw = np.arctan2(np.gradient(xy[:, 1]), np.gradient(xy[:, 0]))
    states = np.zeros((xy.shape[0], 6))
    states[:, 0:2] = xy
    states[:, 2] = yaw
    states[:, 3] = v_ref
    return ReferencePath(states, dt=cost.resolution / max(v_ref, 1e-6))


def hybrid_cost_map(world: TerrainWorld, mud_penalty: float = 0.8) -> GridMap2D:
    """Geometric cost plus a fixed semantic penalty on mud cells."""
    penalty = np.where(
        world.terrain_types.values == world.terrain_types.labels.index(MUD),
        mud_penalty, 0.0,
    )
    return GridMap2D(
        resolution=world.traversability.resolution,
        origin=world.traversability.origin,
        values=world.traversability.values + penalty,
    )


@dataclass(frozen=True)
class BaselineConfig:
    v_ref: float = 3.5
    lookahead: float = 1.5
    untraversable: float = 0.95
    cost_gain: float = 3.0
    mud_penalty: float = 0.8


def run_mission(
    world: TerrainWorld,
    mission: MissionSpec,
    stack: str,
    registry: GpRegistry | None,
    p: VehicleParams,
    planner_cfg: PlannerConfig,
    mppi_cfg: MppiConfig,
    seed: int,
    baseline_cfg: BaselineConfig = BaselineConfig(),
) -> TrialLog:
    """Closed loop at 50 Hz sim rate; planner ~3 Hz, controller 10 Hz.

    All failures are recorded outcomes, never exceptions.
    """
    if stack not in STACKS:
        raise ValueError(f"unknown stack {stack!r}")
    if stack == "proposed" and registry is None:
        raise ValueError("proposed stack needs a trained registry")

    ss = np.random.SeedSequence(seed)
    rng_sim = np.random.default_rng(ss.spawn(1)[0])
    rng_ctrl = np.random.default_rng(ss.spawn(1)[0])
    plan_seeds = np.random.SeedSequence(seed, spawn_key=(1,)).generate_state(100000)

    state = mission.start
    goal = np.asarray(mission.goal, dtype=float)
    r_veh = vehicle_radius(p)
    obstacles = np.array([[o.x, o.y, o.radius] for o in world.obstacles]).reshape(-1, 3)

    warm = np.zeros((mppi_cfg.horizon, 2))
    ref: ReferencePath | None = None
    command = ControlInput(0.0, 0.0)
    n_steps = int(mission.time_limit / SIM_DT)

    times, states, commands, labels = [], [], [], []
    plan_times, track_times = [], []
    outcome, detail = "timeout", "time limit reached"
    plan_count = 0
    fallback_count = 0

    if stack == "baseline1":
        cost_map = world.traversability
    elif stack == "baseline2":
        cost_map = hybrid_cost_map(world, baseline_cfg.mud_penalty)

    for step_i in range(n_steps):
        t = step_i * SIM_DT

        if step_i % PLAN_PERIOD == 0:
            t0 = time.perf_counter()
            if stack == "proposed":
                result = planner.plan(
                    state, goal, world, registry, planner_cfg, p,
                    master_seed=int(plan_seeds[plan_count]),
                )
                if result.fallback:
                    fallback_count += 1
                    ref = None
                else:
                    ref = ReferencePath(result.selected_path, planner_cfg.dt)
            else:
                try:
                    ref = _astar_reference(
                        world, cost_map, state, goal, baseline_cfg.v_ref,
                        baseline_cfg.untraversable, baseline_cfg.cost_gain,
                    )
                except UnreachableError:
                    outcome, detail = "timeout", "planner found no path"
                    break
            plan_count += 1
            plan_times.append(time.perf_counter() - t0)

        if step_i % CTRL_PERIOD == 0:
            t0 = time.perf_counter()
            if ref is None:
                command = ControlInput(0.0, p.a_min)  # fallback: brake straight
            elif stack == "proposed":
                command, warm = tracker.mppi_step(state, ref, world, p, mppi_cfg, warm, rng_ctrl)
            else:
                command = tracker.pure_pursuit(state, ref, baseline_cfg.lookahead,
                                               baseline_cfg.v_ref, p)
            track_times.append(time.perf_counter() - t0)

        times.append(t)
        states.append(state.as_array())
        commands.append(command.as_array())
        labels.append(world.label_at(state.x_w, state.y_w))

        if not world.elevation.contains(state.x_w, state.y_w, margin_cells=1.0):
            outcome, detail = "timeout", "vehicle left the map"
            break
        if obstacles.shape[0] > 0:
            dist = np.hypot(obstacles[:, 0] - state.x_w, obstacles[:, 1] - state.y_w)
            if np.any(dist <= obstacles[:, 2] + r_veh):
                outcome, detail = "collision", "hit obstacle footprint"
                break
        roll, pitch = world.attitude_at(state.x_w, state.y_w, state.yaw, clip=True)
        att = Attitude(float(roll), float(pitch), state.yaw)
        r_roll = dynamics.rollover_index(state, command, att, p,
                                         planner_cfg.rollover_gravity_angle)
        if abs(r_roll) > mission.rollover_limit:
            outcome, detail = "rollover", "rollover index exceeded 1"
            break
        if np.hypot(state.x_w - goal[0], state.y_w - goal[1]) <= mission.goal_radius:
            outcome, detail = "success", "goal reached"
            break

        state = true_step(state, command, world, p, SIM_DT, rng_sim)

    states_arr = np.array(states).reshape(-1, 6)
    seg = np.diff(states_arr[:, 0:2], axis=0)
    path_length = float(np.sum(np.hypot(seg[:, 0], seg[:, 1]))) if len(states) > 1 else 0.0
    return TrialLog(
        times=np.array(times),
        states=states_arr,
        commands=np.array(commands).reshape(-1, 2),
        labels=labels,
        outcome=outcome,
        detail=detail,
        path_length=path_length,
        plan_count=plan_count,
        fallback_count=fallback_count,
        plan_times=plan_times,
        track_times=track_times,
    )
