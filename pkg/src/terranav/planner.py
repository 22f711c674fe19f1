"""Uncertainty-aware local planner.

Samples constant control candidates, propagates a nominal rollout and M
GP-perturbed rollouts per candidate, summarizes them as a predictive path
distribution, scores kernel-smoothed traversability plus Mahalanobis
deviation, filters by rollover index, and picks the best safe candidate.
Also hosts the 8-connected grid A* used by the baseline stacks.
"""

import heapq
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import dynamics
from .dynamics import ControlInput, VehicleParams, VehicleState
from .gp import GpRegistry, INPUT_DIM
from .terrain import GridMap2D
from .world import TerrainWorld


class InsufficientSamplesError(ValueError):
    """Covariance needs at least two rollout samples."""


class UnreachableError(RuntimeError):
    """A* found no path between start and goal."""


@dataclass(frozen=True)
class PlannerConfig:
    n_steer: int = 21
    accel_values: tuple[float, ...] = (-1.0, 0.0, 1.0)
    M: int = 20                  # predictive rollouts per candidate
    N: int = 30                  # horizon steps
    dt: float = 0.1
    s: int = 5                   # smoothing kernel size, cells (odd)
    R_thres: float = 0.3
    w_gp: float = 1.0
    w_e: float = 0.05
    w_dist: float = 0.5
    # Covariance regularizer (m^2). Floors the positional sigma at 5 cm so the
    # Mahalanobis deviation stays finite-scaled when the sampled spread
    # collapses (e.g. a confident GP on well-covered terrain).
    epsilon: float = 2.5e-3
    rollover_gravity_angle: str = "roll"
    substeps: int = dynamics.DEFAULT_SUBSTEPS
    # Hard collision constraint: cells at or above `untraversable` are
    # inflated by the vehicle radius plus `safety_margin` (m); candidates
    # whose rollouts touch the inflated region are discarded outright.
    untraversable: float = 0.95
    safety_margin: float = 0.1

    def __post_init__(self):
        if self.n_steer < 1 or len(self.accel_values) < 1 or self.M < 1 or self.N < 1:
            raise ValueError("grid sizes, M and N must all be >= 1")
        if self.s < 1 or self.s % 2 == 0:
            raise ValueError("kernel size must be odd")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.safety_margin < 0:
            raise ValueError("safety_margin must be >= 0")

    @property
    def I(self) -> int:
        return self.n_steer * len(self.accel_values)


@dataclass
class PathCandidate:
    input: ControlInput
    nominal: np.ndarray            # (N+1, 6)
    samples: np.ndarray            # (M, N+1, 6)
    means: np.ndarray              # (N, 2)
    covariances: np.ndarray        # (N, 2, 2)
    t_gp: np.ndarray               # (N,)
    deviation: np.ndarray          # (N,)
    cost: float
    dist_cost: float
    safe: bool
    truncated: bool
    rollover_nominal: np.ndarray   # (N,)
    rollover_samples: np.ndarray   # (M, N)


@dataclass
class PlanResult:
    selected_index: int
    selected_path: np.ndarray      # (N+1, 6) nominal states of the winner
    command: ControlInput
    candidates: list[PathCandidate]
    fallback: bool

    def to_dict(self, include_samples: bool = False) -> dict:
        cands = []
        for c in self.candidates:
            d = {
                "steer": c.input.steer,
                "accel": c.input.accel,
                "cost": c.cost,
                "dist_cost": c.dist_cost,
                "safe": c.safe,
                "truncated": c.truncated,
                "nominal": c.nominal.tolist(),
            }
            if include_samples:
                d["samples"] = c.samples.tolist()
                d["means"] = c.means.tolist()
                d["covariances"] = c.covariances.tolist()
            cands.append(d)
        return {
            "selected_index": self.selected_index,
            "fallback": self.fallback,
            "command": {"steer": self.command.steer, "accel": self.command.accel},
            "selected_path": self.selected_path.tolist(),
            "candidates": cands,
        }


def sample_inputs(cfg: PlannerConfig, p: VehicleParams) -> list[ControlInput]:
    """Cartesian grid of constant (steer, accel) candidates."""
    if cfg.n_steer == 1:
        steers = np.array([0.0])
    else:
        steers = np.linspace(-p.delta_max, p.delta_max, cfg.n_steer)
    return [ControlInput(float(d), float(a)) for d in steers for a in cfg.accel_values]


def rollout_rng(master_seed: int, candidate: int, sample: int) -> np.random.Generator:
    """Independent stream for one (candidate, sample) pair."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(candidate, sample)))


def _input_grid(cfg: PlannerConfig, p: VehicleParams) -> np.ndarray:
    return np.array([[u.steer, u.accel] for u in sample_inputs(cfg, p)])


def _batch_rollout(S0, U, world: TerrainWorld, cfg: PlannerConfig, p: VehicleParams,
                   registry: GpRegistry | None = None, z=None):
    """Propagate B rollouts; GP residuals are added when a registry is given.

    Returns (states (B, N+1, 6), rollover (B, N), exited (B,)).
    Rollouts that leave the map (one-cell margin) freeze in place and are
    reported in `exited`.
    """
    B = S0.shape[0]
    N = cfg.N
    S = S0.copy()
    states = np.empty((B, N + 1, 6))
    states[:, 0] = S
    roll_idx = np.zeros((B, N))
    active = np.ones(B, dtype=bool)
    exited = np.zeros(B, dtype=bool)
    tmap = world.terrain_types

    roll, pitch = world.attitude_at(S[:, 0], S[:, 1], S[:, 2], clip=True)
    for k in range(N):
        inside = world.elevation.contains(S[:, 0], S[:, 1], margin_cells=1.0)
        newly_out = active & ~inside
        exited |= newly_out
        active &= inside
        S_new = dynamics.step_batch(S, U, roll, pitch, p, cfg.dt, cfg.substeps)
        if registry is not None:
            feats = np.empty((B, INPUT_DIM))
            feats[:, 0:3] = S[:, 3:6]
            feats[:, 3] = roll
            feats[:, 4] = pitch
            feats[:, 5:7] = U
            lbl = tmap.label_index_at(S[:, 0], S[:, 1])
            mean = np.empty((B, 3))
            var = np.empty((B, 3))
            for li, name in enumerate(tmap.labels):
                grp = lbl == li
                if np.any(grp):
                    m, v = registry[name].predict_batch(feats[grp])
                    mean[grp] = m
                    var[grp] = v
            S_new[:, 3:6] += mean + np.sqrt(var) * z[:, k]
            S_new[:, 3] = np.maximum(S_new[:, 3], 0.0)
        S = np.where(active[:, None], S_new, S)
        states[:, k + 1] = S
        # attitude at the post-step pose doubles as next iteration's pre-step
        roll, pitch = world.attitude_at(S[:, 0], S[:, 1], S[:, 2], clip=True)
        ri = dynamics.rollover_index_batch(S, U, roll, pitch, p, cfg.rollover_gravity_angle)
        roll_idx[:, k] = np.where(active, ri, 0.0)
    return states, roll_idx, exited


def rollout_nominal(xi0: VehicleState, zeta: ControlInput, world: TerrainWorld,
                    cfg: PlannerConfig, p: VehicleParams):
    """Nominal rollout of one candidate: (states (N+1, 6), truncated flag)."""
    states, _, exited = _batch_rollout(
        xi0.as_array()[None, :], zeta.as_array()[None, :], world, cfg, p
    )
    return states[0], bool(exited[0])


def rollout_predictive(xi0: VehicleState, zeta: ControlInput, world: TerrainWorld,
                       registry: GpRegistry, cfg: PlannerConfig, p: VehicleParams,
                       master_seed: int, candidate: int = 0):
    """M GP-perturbed rollouts of one candidate: (states (M, N+1, 6), truncated)."""
    if not registry.covers(world.terrain_types.labels):
        raise KeyError("registry does not cover all terrain labels")
    M = cfg.M
    S0 = np.tile(xi0.as_array(), (M, 1))
    U = np.tile(zeta.as_array(), (M, 1))
    z = np.empty((M, cfg.N, 3))
    for m in range(M):
        z[m] = rollout_rng(master_seed, candidate, m).standard_normal((cfg.N, 3))
    states, roll_idx, exited = _batch_rollout(S0, U, world, cfg, p, registry, z)
    return states, roll_idx, bool(np.any(exited))


def distribution_moments(samples: np.ndarray, epsilon: float = 1e-6):
    """Per-step position mean and regularized 2x2 sample covariance.

    `samples` has shape (M, N+1, 6); moments cover steps 1..N.
    """
    samples = np.asarray(samples, dtype=float)
    M = samples.shape[0]
    if M < 2:
        raise InsufficientSamplesError("need M >= 2 samples for covariance")
    pos = samples[:, 1:, 0:2]                     # (M, N, 2)
    mean = pos.mean(axis=0)                       # (N, 2)
    d = pos - mean[None]
    cov = np.einsum("mki,mkj->kij", d, d) / (M - 1)
    cov += epsilon * np.eye(2)[None]
    return mean, cov


def _inv2x2(cov: np.ndarray):
    """Analytic inverse of a stack of 2x2 SPD matrices."""
    a = cov[..., 0, 0]
    b = cov[..., 0, 1]
    c = cov[..., 1, 1]
    det = a * c - b * b
    inv = np.empty_like(cov)
    inv[..., 0, 0] = c / det
    inv[..., 1, 1] = a / det
    inv[..., 0, 1] = inv[..., 1, 0] = -b / det
    return inv, det


def smoothed_traversability(mean, cov, cost: GridMap2D, s: int, t_max: float) -> float:
    """Gaussian-kernel-weighted traversability around one distribution point."""
    t = _smoothed_batch(np.asarray(mean, float)[None, :],
                        np.asarray(cov, float)[None, :, :], cost, s, t_max)
    return float(t[0])


def _smoothed_batch(means, covs, cost: GridMap2D, s: int, t_max: float):
    """Vectorized kernel smoothing; means (B, 2), covs (B, 2, 2) -> (B,)."""
    B = means.shape[0]
    half = s // 2
    res = cost.resolution
    icx, icy = cost.cell_index(means[:, 0], means[:, 1])
    off = np.arange(-half, half + 1)
    cols = icx[:, None, None] + off[None, None, :]       # (B, s, s)
    rows = icy[:, None, None] + off[None, :, None]
    inside = (cols >= 0) & (cols < cost.width) & (rows >= 0) & (rows < cost.height)
    patch = np.where(
        inside,
        cost.values[np.clip(rows, 0, cost.height - 1), np.clip(cols, 0, cost.width - 1)],
        t_max,
    )
    cx = cost.origin[0] + cols * res
    cy = cost.origin[1] + rows * res
    dx = cx - means[:, 0][:, None, None]
    dy = cy - means[:, 1][:, None, None]
    inv, _ = _inv2x2(covs)
    logw = -0.5 * (
        inv[:, 0, 0][:, None, None] * dx * dx
        + 2.0 * inv[:, 0, 1][:, None, None] * dx * dy
        + inv[:, 1, 1][:, None, None] * dy * dy
    )
    logw -= logw.max(axis=(1, 2), keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=(1, 2), keepdims=True)
    return np.sum(w * patch, axis=(1, 2))


def mahalanobis_deviation(nominal_state, mean, cov) -> float:
    """Covariance-weighted distance of the nominal position from the
    predictive mean."""
    if isinstance(nominal_state, VehicleState):
        pos = np.array([nominal_state.x_w, nominal_state.y_w])
    else:
        pos = np.asarray(nominal_state, dtype=float)[:2]
    d = pos - np.asarray(mean, dtype=float)
    inv, _ = _inv2x2(np.asarray(cov, dtype=float))
    return float(np.sqrt(d @ inv @ d))


def blocked_mask(world: TerrainWorld, cfg: PlannerConfig, p: VehicleParams) -> np.ndarray:
    """Boolean grid of cells the vehicle center must stay out of.

    Near-untraversable cells dilated by a disc of vehicle radius plus the
    configured safety margin, so that a center kept off the mask clears the
    underlying hazard with the whole footprint.
    """
    hard = world.traversability.values >= cfg.untraversable
    r = dynamics.vehicle_radius(p) + cfg.safety_margin
    cells = int(np.ceil(r / world.traversability.resolution))
    if cells > 0 and hard.any():
        yy, xx = np.mgrid[-cells:cells + 1, -cells:cells + 1]
        disc = xx * xx + yy * yy <= cells * cells
        hard = ndimage.binary_dilation(hard, structure=disc)
    return hard


def _hits_mask(mask: np.ndarray, grid: GridMap2D, pts: np.ndarray) -> np.ndarray:
    """True where (..., 2) world points fall on a masked cell (in-map only)."""
    ix, iy = grid.cell_index(pts[..., 0], pts[..., 1])
    inside = (ix >= 0) & (ix < grid.width) & (iy >= 0) & (iy < grid.height)
    out = np.zeros(pts.shape[:-1], bool)
    out[inside] = mask[iy[inside], ix[inside]]
    return out


def candidate_cost(t_gp: np.ndarray, deviation: np.ndarray, cfg: PlannerConfig,
                   truncated: bool = False) -> float:
    """Horizon sum of weighted smoothed-traversability and deviation terms."""
    if truncated:
        return float("inf")
    return float(np.sum(cfg.w_gp * np.asarray(t_gp) + cfg.w_e * np.asarray(deviation)))


def safe_set(candidates: list[PathCandidate], cfg: PlannerConfig) -> set[int]:
    """Indices whose nominal and sampled rollouts never exceed R_thres."""
    out = set()
    for i, c in enumerate(candidates):
        if c.truncated:
            continue
        if (np.all(np.abs(c.rollover_nominal) <= cfg.R_thres)
                and np.all(np.abs(c.rollover_samples) <= cfg.R_thres)):
            out.add(i)
    return out


def select_best(candidates: list[PathCandidate], safe: set[int],
                goal, cfg: PlannerConfig, p: VehicleParams) -> PlanResult:
    """Argmin of cost + weighted goal distance over the safe set.

    Ties break toward the smallest steering magnitude, then smallest index.
    Empty safe set falls back to a full-brake, zero-steer command.
    """
    goal = np.asarray(goal, dtype=float)
    for c in candidates:
        c.dist_cost = float(np.min(np.linalg.norm(c.nominal[1:, 0:2] - goal, axis=1)))
    if not safe:
        n = candidates[0].nominal.shape[0] if candidates else 1
        return PlanResult(
            selected_index=-1,
            selected_path=np.zeros((n, 6)),
            command=ControlInput(0.0, p.a_min),
            candidates=candidates,
            fallback=True,
        )
    best = min(
        safe,
        key=lambda i: (
            candidates[i].cost + cfg.w_dist * candidates[i].dist_cost,
            abs(candidates[i].input.steer),
            i,
        ),
    )
    return PlanResult(
        selected_index=best,
        selected_path=candidates[best].nominal.copy(),
        command=candidates[best].input,
        candidates=candidates,
        fallback=False,
    )


def plan(xi0: VehicleState, goal, world: TerrainWorld, registry: GpRegistry,
         cfg: PlannerConfig, p: VehicleParams, master_seed: int) -> PlanResult:
    """Full planning call: a deterministic function of its arguments."""
    if not registry.covers(world.terrain_types.labels):
        raise KeyError("registry does not cover all terrain labels")
    inputs = _input_grid(cfg, p)                 # (I, 2)
    I, M, N = cfg.I, cfg.M, cfg.N

    S0 = np.tile(xi0.as_array(), (I, 1))
    nom_states, nom_roll, nom_exit = _batch_rollout(S0, inputs, world, cfg, p)

    B = I * M
    S0b = np.tile(xi0.as_array(), (B, 1))
    Ub = np.repeat(inputs, M, axis=0)
    z = np.empty((B, N, 3))
    for i in range(I):
        for m in range(M):
            z[i * M + m] = rollout_rng(master_seed, i, m).standard_normal((N, 3))
    smp_states, smp_roll, smp_exit = _batch_rollout(S0b, Ub, world, cfg, p, registry, z)
    smp_states = smp_states.reshape(I, M, N + 1, 6)
    smp_roll = smp_roll.reshape(I, M, N)
    smp_exit = smp_exit.reshape(I, M)

    pos = smp_states[:, :, 1:, 0:2]
    means = pos.mean(axis=1)                                     # (I, N, 2)
    d = pos - means[:, None]
    covs = np.einsum("imka,imkb->ikab", d, d) / (M - 1)
    covs += cfg.epsilon * np.eye(2)[None, None]

    t_gp = _smoothed_batch(
        means.reshape(-1, 2), covs.reshape(-1, 2, 2),
        world.traversability, cfg.s, world.t_max,
    ).reshape(I, N)

    diff = nom_states[:, 1:, 0:2] - means
    inv, _ = _inv2x2(covs)
    dev = np.sqrt(np.maximum(np.einsum("ika,ikab,ikb->ik", diff, inv, diff), 0.0))

    # Hard constraint on the nominal path only; sampled spread near obstacles
    # is already penalized through the kernel-smoothed traversability term.
    mask = blocked_mask(world, cfg, p)
    nom_hit = _hits_mask(mask, world.traversability,
                         nom_states[:, 1:, 0:2]).any(axis=1)                   # (I,)

    candidates = []
    for i in range(I):
        truncated = bool(nom_exit[i] or np.any(smp_exit[i]) or nom_hit[i])
        c = PathCandidate(
            input=ControlInput(float(inputs[i, 0]), float(inputs[i, 1])),
            nominal=nom_states[i],
            samples=smp_states[i],
            means=means[i],
            covariances=covs[i],
            t_gp=t_gp[i],
            deviation=dev[i],
            cost=candidate_cost(t_gp[i], dev[i], cfg, truncated),
            dist_cost=0.0,
            safe=False,
            truncated=truncated,
            rollover_nominal=nom_roll[i],
            rollover_samples=smp_roll[i],
        )
        candidates.append(c)

    safe = safe_set(candidates, cfg)
    for i in safe:
        candidates[i].safe = True
    return select_best(candidates, safe, goal, cfg, p)


_NEIGHBORS = [
    (1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
    (1, 1, np.sqrt(2)), (1, -1, np.sqrt(2)), (-1, 1, np.sqrt(2)), (-1, -1, np.sqrt(2)),
]


def astar_plan(cost: GridMap2D, start: tuple[int, int], goal: tuple[int, int],
               untraversable: float = 0.95, cost_gain: float = 3.0):
    """8-connected A* over the cost grid.

    Edge weight is step length times (1 + cost_gain * mean endpoint cell
    cost); the Euclidean heuristic stays admissible because the factor is
    always >= 1. Returns the cell path start..goal.
    """
    values = cost.values
    h_cells, w_cells = values.shape
    res = cost.resolution

    def blocked(ix, iy):
        return values[iy, ix] >= untraversable

    sx, sy = start
    gx, gy = goal
    for (ix, iy), name in (((sx, sy), "start"), ((gx, gy), "goal")):
        if not (0 <= ix < w_cells and 0 <= iy < h_cells):
            raise ValueError(f"{name} cell outside the map")
        if blocked(ix, iy):
            raise UnreachableError(f"{name} cell is untraversable")

    def heuristic(ix, iy):
        return res * np.hypot(ix - gx, iy - gy)

    g_score = {start: 0.0}
    came = {}
    open_heap = [(heuristic(sx, sy), 0.0, start)]
    closed = set()
    while open_heap:
        f, g, node = heapq.heappop(open_heap)
        if node in closed:
            continue
        if node == goal:
            path = [node]
            while node in came:
                node = came[node]
                path.append(node)
            return path[::-1]
        closed.add(node)
        ix, iy = node
        c_here = values[iy, ix]
        for dx, dy, step_len in _NEIGHBORS:
            nx, ny = ix + dx, iy + dy
            if not (0 <= nx < w_cells and 0 <= ny < h_cells) or blocked(nx, ny):
                continue
            w = res * step_len * (1.0 + cost_gain * 0.5 * (c_here + values[ny, nx]))
            ng = g + w
            if ng < g_score.get((nx, ny), np.inf):
                g_score[(nx, ny)] = ng
                came[(nx, ny)] = node
                heapq.heappush(open_heap, (ng + heuristic(nx, ny), ng, (nx, ny)))
    raise UnreachableError("no path between start and goal")
