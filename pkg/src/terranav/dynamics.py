"""Extended dynamic bicycle model on 3-D terrain.

State is [x_w, y_w, yaw, v_x_b, v_y_b, omega_z_b]; inputs are
[steer, longitudinal accel]. The attitude (roll, pitch) comes from the
terrain and is held fixed within one integration step.

Scalar entry points operate on the dataclasses below; the ``*_batch``
functions take (B, 6) / (B, 2) arrays plus per-row roll/pitch vectors and are
what the rollout samplers call.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from .terrain import Attitude

# Substep count used for dt = 0.1 rollouts. The linear tire model has a
# fastest eigenvalue of roughly C_alpha * g / v_min (and its yaw-rate
# counterpart); RK4 needs |lambda| * dt < 2.8, which dt = 0.1 violates at low
# speed. dt / 4 = 0.025 s keeps |lambda| * dt around 1.5 at the defaults.
DEFAULT_SUBSTEPS = 4


class AttitudeSingularityError(ValueError):
    """Pitch at or beyond 90 degrees: Euler-rate map is singular."""


class DegenerateLoadError(ValueError):
    """Total vertical load is non-positive; rollover index undefined."""


@dataclass(frozen=True)
class VehicleState:
    x_w: float = 0.0
    y_w: float = 0.0
    yaw: float = 0.0
    v_x_b: float = 0.0
    v_y_b: float = 0.0
    omega_z_b: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x_w, self.y_w, self.yaw, self.v_x_b, self.v_y_b, self.omega_z_b])

    @staticmethod
    def from_array(a) -> "VehicleState":
        a = np.asarray(a, dtype=float)
        return VehicleState(*(float(v) for v in a))


@dataclass(frozen=True)
class ControlInput:
    steer: float = 0.0
    accel: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.steer, self.accel])


@dataclass(frozen=True)
class VehicleParams:
    """Defaults sized for a 1:5-scale offroad platform; override from the
    scenario config."""

    m: float = 22.0          # kg
    I_zz: float = 1.2        # kg m^2
    L_f: float = 0.3         # m
    L_r: float = 0.3         # m
    L_w: float = 0.44        # track width, m
    h: float = 0.2           # c.g. height above ground, m
    h_R: float = 0.12        # c.g. height above roll center, m
    C_alpha_f: float = 3.0   # normalized cornering stiffness, 1/rad
    C_alpha_r: float = 3.0
    g: float = 9.81
    delta_max: float = 0.35  # rad
    a_min: float = -3.0      # m/s^2
    a_max: float = 3.0
    v_min: float = 0.8       # slip-angle guard speed, m/s

    def __post_init__(self):
        if min(self.m, self.I_zz, self.L_f, self.L_r, self.L_w, self.h, self.h_R) <= 0:
            raise ValueError("masses, inertias and lengths must be > 0")
        if self.v_min <= 0:
            raise ValueError("v_min must be > 0")

    @property
    def wheelbase(self) -> float:
        return self.L_f + self.L_r

    def clamp_input(self, u: ControlInput) -> ControlInput:
        return ControlInput(
            float(np.clip(u.steer, -self.delta_max, self.delta_max)),
            float(np.clip(u.accel, self.a_min, self.a_max)),
        )


def vehicle_radius(p: VehicleParams) -> float:
    """Conservative disc footprint around the c.g."""
    return 0.5 * math.hypot(p.wheelbase, p.L_w)


@dataclass(frozen=True)
class TerrainForces:
    F_G: float
    F_zf: float
    F_zr: float
    F_yf: float
    F_yr: float


def _forces_batch(S, U, roll, pitch, p: VehicleParams):
    """Vectorized gravity component, vertical loads, and lateral tire forces.

    Returns (F_G, F_zf, F_zr, F_yf, F_yr), each shaped like the batch.
    """
    v_x, v_y, w_z = S[..., 3], S[..., 4], S[..., 5]
    delta, a_x = U[..., 0], U[..., 1]
    cphi, sphi = np.cos(roll), np.sin(roll)
    cth, sth = np.cos(pitch), np.sin(pitch)

    F_G = -p.m * p.g * cth * sphi
    L = p.wheelbase
    F_zf = (p.L_r * p.m * p.g * cth * cphi + p.h * p.m * a_x + p.h * p.m * p.g * sth) / L
    F_zr = (p.L_f * p.m * p.g * cth * cphi - p.h * p.m * a_x - p.h * p.m * p.g * sth) / L

    v_guard = np.maximum(v_x, p.v_min)
    alpha_f = delta - (v_y + p.L_f * w_z) / v_guard
    alpha_r = (p.L_r * w_z - v_y) / v_guard
    F_yf = p.C_alpha_f * F_zf * alpha_f
    F_yr = p.C_alpha_r * F_zr * alpha_r
    return F_G, F_zf, F_zr, F_yf, F_yr


def terrain_forces(state: VehicleState, u: ControlInput, att: Attitude, p: VehicleParams) -> TerrainForces:
    F_G, F_zf, F_zr, F_yf, F_yr = _forces_batch(
        state.as_array(), u.as_array(), att.roll, att.pitch, p
    )
    return TerrainForces(float(F_G), float(F_zf), float(F_zr), float(F_yf), float(F_yr))


def derivative_batch(S, U, roll, pitch, p: VehicleParams):
    """Time derivative of the 6-D state for a batch. Attitude per row."""
    yaw, v_x, v_y, w_z = S[..., 2], S[..., 3], S[..., 4], S[..., 5]
    delta, a_x = U[..., 0], U[..., 1]
    cphi, sphi = np.cos(roll), np.sin(roll)
    cth, sth = np.cos(pitch), np.sin(pitch)
    cpsi, spsi = np.cos(yaw), np.sin(yaw)

    F_G, _, _, F_yf, F_yr = _forces_batch(S, U, roll, pitch, p)

    # World-frame velocity: R (v_x, v_y, 0), first two rows.
    vx_w = cpsi * cth * v_x + (cpsi * sth * sphi - spsi * cphi) * v_y
    vy_w = spsi * cth * v_x + (spsi * sth * sphi + cpsi * cphi) * v_y

    out = np.empty_like(S)
    out[..., 0] = vx_w
    out[..., 1] = vy_w
    out[..., 2] = cphi / cth * w_z
    out[..., 3] = a_x
    out[..., 4] = (F_yf + F_yr - F_G) / p.m - v_x * w_z
    out[..., 5] = (F_yf * p.L_f * np.cos(delta) - p.L_r * F_yr) / p.I_zz
    return out


def state_derivative(state: VehicleState, u: ControlInput, att: Attitude, p: VehicleParams) -> np.ndarray:
    if np.cos(att.pitch) <= 0.0:
        raise AttitudeSingularityError("cos(pitch) <= 0")
    return derivative_batch(state.as_array(), u.as_array(), att.roll, att.pitch, p)


def _params_vector(p: VehicleParams) -> np.ndarray:
    return np.array([p.m, p.I_zz, p.L_f, p.L_r, p.h, p.C_alpha_f, p.C_alpha_r,
                     p.g, p.v_min])


@njit(inline="always", fastmath=True)
def _deriv6(x, y, yaw, vx, vy, wz, ax, cphi, sphi, cth, sth, cd,
            F_G, F_zf, F_zr, delta, m, I_zz, L_f, L_r, C_f, C_r, v_min):
    vg = vx if vx > v_min else v_min
    alpha_f = delta - (vy + L_f * wz) / vg
    alpha_r = (L_r * wz - vy) / vg
    F_yf = C_f * F_zf * alpha_f
    F_yr = C_r * F_zr * alpha_r
    cpsi = math.cos(yaw)
    spsi = math.sin(yaw)
    dx = cpsi * cth * vx + (cpsi * sth * sphi - spsi * cphi) * vy
    dy = spsi * cth * vx + (spsi * sth * sphi + cpsi * cphi) * vy
    dyaw = cphi / cth * wz
    dvy = (F_yf + F_yr - F_G) / m - vx * wz
    dwz = (F_yf * L_f * cd - L_r * F_yr) / I_zz
    return dx, dy, dyaw, ax, dvy, dwz


@njit(cache=True, fastmath=True)
def _rk4_kernel(S, U, roll, pitch, pv, dt, n_sub):
    m, I_zz, L_f, L_r, h, C_f, C_r, g, v_min = pv
    L = L_f + L_r
    B = S.shape[0]
    out = np.empty_like(S)
    hs = dt / n_sub
    for b in range(B):
        x, y, yaw, vx, vy, wz = S[b, 0], S[b, 1], S[b, 2], S[b, 3], S[b, 4], S[b, 5]
        delta, ax = U[b, 0], U[b, 1]
        cphi = math.cos(roll[b])
        sphi = math.sin(roll[b])
        cth = math.cos(pitch[b])
        sth = math.sin(pitch[b])
        cd = math.cos(delta)
        F_G = -m * g * cth * sphi
        F_zf = (L_r * m * g * cth * cphi + h * m * ax + h * m * g * sth) / L
        F_zr = (L_f * m * g * cth * cphi - h * m * ax - h * m * g * sth) / L
        for _ in range(n_sub):
            a1 = _deriv6(x, y, yaw, vx, vy, wz, ax, cphi, sphi, cth, sth, cd,
                         F_G, F_zf, F_zr, delta, m, I_zz, L_f, L_r, C_f, C_r, v_min)
            a2 = _deriv6(x + 0.5 * hs * a1[0], y + 0.5 * hs * a1[1], yaw + 0.5 * hs * a1[2],
                         vx + 0.5 * hs * a1[3], vy + 0.5 * hs * a1[4], wz + 0.5 * hs * a1[5],
                         ax, cphi, sphi, cth, sth, cd, F_G, F_zf, F_zr, delta,
                         m, I_zz, L_f, L_r, C_f, C_r, v_min)
            a3 = _deriv6(x + 0.5 * hs * a2[0], y + 0.5 * hs * a2[1], yaw + 0.5 * hs * a2[2],
                         vx + 0.5 * hs * a2[3], vy + 0.5 * hs * a2[4], wz + 0.5 * hs * a2[5],
                         ax, cphi, sphi, cth, sth, cd, F_G, F_zf, F_zr, delta,
                         m, I_zz, L_f, L_r, C_f, C_r, v_min)
            a4 = _deriv6(x + hs * a3[0], y + hs * a3[1], yaw + hs * a3[2],
                         vx + hs * a3[3], vy + hs * a3[4], wz + hs * a3[5],
                         ax, cphi, sphi, cth, sth, cd, F_G, F_zf, F_zr, delta,
                         m, I_zz, L_f, L_r, C_f, C_r, v_min)
            x += hs / 6.0 * (a1[0] + 2 * a2[0] + 2 * a3[0] + a4[0])
            y += hs / 6.0 * (a1[1] + 2 * a2[1] + 2 * a3[1] + a4[1])
            yaw += hs / 6.0 * (a1[2] + 2 * a2[2] + 2 * a3[2] + a4[2])
            vx += hs / 6.0 * (a1[3] + 2 * a2[3] + 2 * a3[3] + a4[3])
            vy += hs / 6.0 * (a1[4] + 2 * a2[4] + 2 * a3[4] + a4[4])
            wz += hs / 6.0 * (a1[5] + 2 * a2[5] + 2 * a3[5] + a4[5])
            if vx < 0.0:
                vx = 0.0  # no reverse in this artifact
        out[b, 0] = x
        out[b, 1] = y
        out[b, 2] = yaw
        out[b, 3] = vx
        out[b, 4] = vy
        out[b, 5] = wz
    return out


def step_batch(S, U, roll, pitch, p: VehicleParams, dt: float, substeps: int = 1):
    """RK4 propagation for a batch, attitude held fixed within the step.

    `substeps` > 1 subdivides dt to keep the stiff low-speed tire dynamics
    inside the RK4 stability region.
    """
    if substeps > 1:
        S = np.ascontiguousarray(S, dtype=float)
        U = np.ascontiguousarray(np.broadcast_to(U, (S.shape[0], 2)), dtype=float)
        roll_v = np.ascontiguousarray(np.broadcast_to(roll, S.shape[0]), dtype=float)
        pitch_v = np.ascontiguousarray(np.broadcast_to(pitch, S.shape[0]), dtype=float)
        return _rk4_kernel(S, U, roll_v, pitch_v, _params_vector(p), dt, substeps)
    k1 = derivative_batch(S, U, roll, pitch, p)
    k2 = derivative_batch(S + 0.5 * dt * k1, U, roll, pitch, p)
    k3 = derivative_batch(S + 0.5 * dt * k2, U, roll, pitch, p)
    k4 = derivative_batch(S + dt * k3, U, roll, pitch, p)
    out = S + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    out[..., 3] = np.maximum(out[..., 3], 0.0)  # no reverse in this artifact
    return out


def step(state: VehicleState, u: ControlInput, att: Attitude, p: VehicleParams,
         dt: float, substeps: int = 1) -> VehicleState:
    """Explicit RK4 propagation over dt.

    Callers re-query the terrain attitude at the new position.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if np.cos(att.pitch) <= 0.0:
        raise AttitudeSingularityError("cos(pitch) <= 0")
    out = step_batch(state.as_array()[None, :] if substeps > 1 else state.as_array(),
                     u.as_array(), att.roll, att.pitch, p, dt, substeps)
    return VehicleState.from_array(out[0] if substeps > 1 else out)


def lateral_acceleration_batch(S, U, p: VehicleParams):
    """Body-frame lateral acceleration used by the rollover index."""
    v_x, v_y, w_z = S[..., 3], S[..., 4], S[..., 5]
    delta = U[..., 0]
    v_guard = np.maximum(v_x, p.v_min)
    return (
        p.C_alpha_f / p.m * (delta - (v_y + p.L_f * w_z) / v_guard)
        + p.C_alpha_r / p.m * (p.L_r * w_z - v_y) / v_guard
    )


def rollover_index_batch(S, U, roll, pitch, p: VehicleParams, gravity_angle: str = "yaw"):
    """Normalized lateral load-transfer measure for a batch of states.

    `gravity_angle` selects which angle enters the static-gravity term:
    'yaw' (as the source formula is printed) or 'roll' (physically expected).
    """
    if gravity_angle not in ("yaw", "roll"):
        raise ValueError(f"gravity_angle must be 'yaw' or 'roll', got {gravity_angle!r}")
    F_G, F_zf, F_zr, _, _ = _forces_batch(S, U, roll, pitch, p)
    a_y = lateral_acceleration_batch(S, U, p)
    ang = S[..., 2] if gravity_angle == "yaw" else roll
    total = F_zf + F_zr
    return 2.0 * ((p.m * a_y + F_G) * p.h_R - p.m * p.g * p.h_R * np.sin(ang)) / (p.L_w * total)


def rollover_index(
    state: VehicleState,
    u: ControlInput,
    att: Attitude,
    p: VehicleParams,
    gravity_angle: str = "yaw",
) -> float:
    tf = terrain_forces(state, u, att, p)
    if tf.F_zf + tf.F_zr <= 0.0:
        raise DegenerateLoadError("non-positive total vertical load")
    return float(
        rollover_index_batch(
            state.as_array(), u.as_array(), att.roll, att.pitch, p, gravity_angle
        )
    )
