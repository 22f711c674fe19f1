"""Path following: sampling-based MPPI (primary) and pure pursuit (baseline)."""

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import dynamics
from .dynamics import ControlInput, VehicleParams, VehicleState
from .world import TerrainWorld


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a), 2 * np.pi)


@dataclass(frozen=True)
class MppiConfig:
    n_rollouts: int = 5000
    horizon: int = 20            # steps (2 s at dt = 0.1)
    dt: float = 0.1
    lam: float = 1.0             # softmax temperature
    sigma_steer: float = 0.15
    sigma_accel: float = 0.8
    Q: tuple[float, ...] = (10.0, 10.0, 2.0, 1.0, 0.5, 0.5)
    R: tuple[float, ...] = (1.0, 0.1)
    substeps: int = dynamics.DEFAULT_SUBSTEPS

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("temperature must be > 0")
        if min(self.Q) < 0 or min(self.R) < 0:
            raise ValueError("Q and R must be non-negative")

    @property
    def q_diag(self) -> np.ndarray:
        return np.asarray(self.Q, dtype=float)

    @property
    def r_diag(self) -> np.ndarray:
        return np.asarray(self.R, dtype=float)


class ReferencePath:
    """Time-indexed reference states at a fixed sampling interval."""

    def __init__(self, states: np.ndarray, dt: float):
        self.states = np.atleast_2d(np.asarray(states, dtype=float))
        if self.states.shape[1] != 6:
            raise ValueError("reference states must be 6-D")
        if self.states.shape[0] < 1:
            raise ValueError("reference path must be non-empty")
        self.dt = float(dt)

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, 0:2]

    def sample(self, times) -> np.ndarray:
        """Linear interpolation at arbitrary times; yaw interpolated on the
        circle; times beyond the path clamp to the endpoints."""
        times = np.asarray(times, dtype=float)
        g = np.clip(times / self.dt, 0.0, len(self) - 1)
        i0 = np.minimum(np.floor(g).astype(int), max(len(self) - 2, 0))
        i1 = np.minimum(i0 + 1, len(self) - 1)
        f = (g - i0)[:, None]
        a, b = self.states[i0], self.states[i1]
        out = a * (1 - f) + b * f
        dyaw = wrap_angle(b[:, 2] - a[:, 2])
        out[:, 2] = wrap_angle(a[:, 2] + f[:, 0] * dyaw)
        return out

    def window_from(self, position, n_steps: int, dt: float) -> np.ndarray:
        """(n_steps+1, 6) reference window starting at the path point nearest
        to `position`."""
        pos = np.asarray(position, dtype=float)[:2]
        i_near = int(np.argmin(np.linalg.norm(self.positions - pos, axis=1)))
        t0 = i_near * self.dt
        return self.sample(t0 + dt * np.arange(n_steps + 1))


def _stage_errors(traj, ref):
    err = traj - ref
    err[..., 2] = wrap_angle(err[..., 2])
    return err


def mppi_cost(traj: np.ndarray, inputs: np.ndarray, ref: np.ndarray, cfg: MppiConfig) -> float:
    """Quadratic tracking cost over the horizon plus terminal term."""
    traj = np.asarray(traj, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    ref = np.asarray(ref, dtype=float)
    err = _stage_errors(traj, ref)
    state_cost = np.sum(err * err * cfg.q_diag, axis=-1)       # all N+1 states
    input_cost = np.sum(inputs * inputs * cfg.r_diag, axis=-1)  # N stages
    return float(np.sum(state_cost) + np.sum(input_cost))


@njit(inline="always", fastmath=True)
def _bilerp_clip(v, gx, gy):
    """Bilinear sample of grid `v` at fractional indices, clamped to borders."""
    h, w = v.shape
    if gx < 0.0:
        gx = 0.0
    elif gx > w - 1.0:
        gx = w - 1.0
    if gy < 0.0:
        gy = 0.0
    elif gy > h - 1.0:
        gy = h - 1.0
    ix0 = int(math.floor(gx))
    iy0 = int(math.floor(gy))
    if ix0 > w - 2:
        ix0 = w - 2
    if iy0 > h - 2:
        iy0 = h - 2
    fx = gx - ix0
    fy = gy - iy0
    return (v[iy0, ix0] * (1 - fx) * (1 - fy) + v[iy0, ix0 + 1] * fx * (1 - fy)
            + v[iy0 + 1, ix0] * (1 - fx) * fy + v[iy0 + 1, ix0 + 1] * fx * fy)


@njit(cache=True, fastmath=True)
def _rollout_costs_kernel(S0, U, elev, ox, oy, res, pv, dt, n_sub, ref, q):
    """Tracking cost of K perturbed rollouts, fused with terrain attitude.

    Rolls the nominal terrain dynamics (RK4, attitude held per step) and sums
    the quadratic stage errors against `ref` (steps 1..N). Slopes are assumed
    below the attitude cap; the planner and simulator enforce it.
    """
    K, N = U.shape[0], U.shape[1]
    m, I_zz, L_f, L_r, hcg, C_f, C_r, g, v_min = pv
    L = L_f + L_r
    hs = dt / n_sub
    costs = np.zeros(K)
    for b in range(K):
        x, y, yaw, vx, vy, wz = S0[b, 0], S0[b, 1], S0[b, 2], S0[b, 3], S0[b, 4], S0[b, 5]
        c = 0.0
        for k in range(N):
            # terrain attitude at the pre-step pose (central differences of
            # the bilinear surface, one cell either side)
            gx = (x - ox) / res
            gy = (y - oy) / res
            dzdx = (_bilerp_clip(elev, gx + 1.0, gy) - _bilerp_clip(elev, gx - 1.0, gy)) / (2 * res)
            dzdy = (_bilerp_clip(elev, gx, gy + 1.0) - _bilerp_clip(elev, gx, gy - 1.0)) / (2 * res)
            inv_n = 1.0 / math.sqrt(dzdx * dzdx + dzdy * dzdy + 1.0)
            nx = -dzdx * inv_n
            ny = -dzdy * inv_n
            nz = inv_n
            cpsi = math.cos(yaw)
            spsi = math.sin(yaw)
            n_fwd = cpsi * nx + spsi * ny
            n_lat = -spsi * nx + cpsi * ny
            sr = -n_lat
            if sr > 1.0:
                sr = 1.0
            elif sr < -1.0:
                sr = -1.0
            roll = math.asin(sr)
            pitch = math.atan2(n_fwd, nz)

            delta = U[b, k, 0]
            ax = U[b, k, 1]
            cphi = math.cos(roll)
            sphi = math.sin(roll)
            cth = math.cos(pitch)
            sth = math.sin(pitch)
            cd = math.cos(delta)
            F_G = -m * g * cth * sphi
            F_zf = (L_r * m * g * cth * cphi + hcg * m * ax + hcg * m * g * sth) / L
            F_zr = (L_f * m * g * cth * cphi - hcg * m * ax - hcg * m * g * sth) / L
            for _ in range(n_sub):
                a1 = dynamics._deriv6(x, y, yaw, vx, vy, wz, ax, cphi, sphi, cth, sth, cd,
                                      F_G, F_zf, F_zr, delta, m, I_zz, L_f, L_r, C_f, C_r, v_min)
                a2 = dynamics._deriv6(x + 0.5 * hs * a1[0], y + 0.5 * hs * a1[1],
                                      yaw + 0.5 * hs * a1[2], vx + 0.5 * hs * a1[3],
                                      vy + 0.5 * hs * a1[4], wz + 0.5 * hs * a1[5],
                                      ax, cphi, sphi, cth, sth, cd, F_G, F_zf, F_zr,
                                      delta, m, I_zz, L_f, L_r, C_f, C_r, v_min)
                a3 = dynamics._deriv6(x + 0.5 * hs * a2[0], y + 0.5 * hs * a2[1],
                                      yaw + 0.5 * hs * a2[2], vx + 0.5 * hs * a2[3],
                                      vy + 0.5 * hs * a2[4], wz + 0.5 * hs * a2[5],
                                      ax, cphi, sphi, cth, sth, cd, F_G, F_zf, F_zr,
                                      delta, m, I_zz, L_f, L_r, C_f, C_r, v_min)
                a4 = dynamics._deriv6(x + hs * a3[0], y + hs * a3[1], yaw + hs * a3[2],
                                      vx + hs * a3[3], vy + hs * a3[4], wz + hs * a3[5],
                                      ax, cphi, sphi, cth, sth, cd, F_G, F_zf, F_zr,
                                      delta, m, I_zz, L_f, L_r, C_f, C_r, v_min)
                x += hs / 6.0 * (a1[0] + 2 * a2[0] + 2 * a3[0] + a4[0])
                y += hs / 6.0 * (a1[1] + 2 * a2[1] + 2 * a3[1] + a4[1])
                yaw += hs / 6.0 * (a1[2] + 2 * a2[2] + 2 * a3[2] + a4[2])
                vx += hs / 6.0 * (a1[3] + 2 * a2[3] + 2 * a3[3] + a4[3])
                vy += hs / 6.0 * (a1[4] + 2 * a2[4] + 2 * a3[4] + a4[4])
                wz += hs / 6.0 * (a1[5] + 2 * a2[5] + 2 * a3[5] + a4[5])
                if vx < 0.0:
                    vx = 0.0  # no reverse in this artifact

            e0 = x - ref[k + 1, 0]
            e1 = y - ref[k + 1, 1]
            e2 = yaw - ref[k + 1, 2]
            e2 = math.pi - (math.pi - e2) % (2 * math.pi)
            e3 = vx - ref[k + 1, 3]
            e4 = vy - ref[k + 1, 4]
            e5 = wz - ref[k + 1, 5]
            c += (q[0] * e0 * e0 + q[1] * e1 * e1 + q[2] * e2 * e2
                  + q[3] * e3 * e3 + q[4] * e4 * e4 + q[5] * e5 * e5)
        costs[b] = c
    return costs


def mppi_weights(costs: np.ndarray, lam: float) -> np.ndarray:
    """Softmax over negative costs; invariant to adding a constant."""
    costs = np.asarray(costs, dtype=float)
    w = np.exp(-(costs - costs.min()) / lam)
    return w / w.sum()


def mppi_step(
    state: VehicleState,
    ref: ReferencePath,
    world: TerrainWorld,
    p: VehicleParams,
    cfg: MppiConfig,
    warm_start: np.ndarray,
    rng: np.random.Generator,
) -> tuple[ControlInput, np.ndarray]:
    """One MPPI iteration.

    Perturbs the warm-start sequence per rollout, simulates with the nominal
    terrain dynamics, softmax-averages the sequences, and returns the first
    command plus the shifted sequence for the next call.
    """
    K, N = cfg.n_rollouts, cfg.horizon
    warm_start = np.asarray(warm_start, dtype=float).reshape(N, 2)
    noise = rng.standard_normal((K, N, 2)) * np.array([cfg.sigma_steer, cfg.sigma_accel])
    U = warm_start[None] + noise
    U[..., 0] = np.clip(U[..., 0], -p.delta_max, p.delta_max)
    U[..., 1] = np.clip(U[..., 1], p.a_min, p.a_max)

    ref_window = ref.window_from((state.x_w, state.y_w), N, cfg.dt)

    # Input cost plus the (rollout-independent) step-0 stage cost in numpy;
    # the per-step rollout + stage costs run in the fused kernel.
    q = cfg.q_diag
    s0 = state.as_array()
    costs = np.sum(U * U * cfg.r_diag, axis=(-1, -2))
    err0 = s0 - ref_window[0]
    err0[2] = wrap_angle(err0[2])
    costs += float((err0 * err0) @ q)
    elev = world.elevation
    costs += _rollout_costs_kernel(
        np.tile(s0, (K, 1)), np.ascontiguousarray(U), elev.values,
        elev.origin[0], elev.origin[1], elev.resolution,
        dynamics._params_vector(p), cfg.dt, cfg.substeps,
        np.ascontiguousarray(ref_window), q,
    )

    w = mppi_weights(costs, cfg.lam)
    u_opt = np.einsum("k,knj->nj", w, U)
    command = ControlInput(
        float(np.clip(u_opt[0, 0], -p.delta_max, p.delta_max)),
        float(np.clip(u_opt[0, 1], p.a_min, p.a_max)),
    )
    next_warm = np.vstack([u_opt[1:], u_opt[-1:]])
    return command, next_warm


def pure_pursuit(
    state: VehicleState,
    path: ReferencePath,
    lookahead: float,
    v_ref: float,
    p: VehicleParams,
    k_speed: float = 2.0,
) -> ControlInput:
    """Geometric tracker: steer toward the lookahead point, P-control speed."""
    pos = np.array([state.x_w, state.y_w])
    pts = path.positions
    i_near = int(np.argmin(np.linalg.norm(pts - pos, axis=1)))
    target = pts[-1]
    for i in range(i_near, len(pts)):
        if np.linalg.norm(pts[i] - pos) >= lookahead:
            target = pts[i]
            break
    dx, dy = target - pos
    alpha = wrap_angle(np.arctan2(dy, dx) - state.yaw)
    ld = max(np.hypot(dx, dy), 1e-6)
    steer = float(np.clip(np.arctan(2.0 * p.wheelbase * np.sin(alpha) / ld),
                          -p.delta_max, p.delta_max))
    accel = float(np.clip(k_speed * (v_ref - state.v_x_b), p.a_min, p.a_max))
    return ControlInput(steer, accel)
