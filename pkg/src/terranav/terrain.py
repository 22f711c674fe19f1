"""Grid maps, geometric traversability, and terrain-consistent vehicle attitude.

All maps are immutable snapshots: construct once, read from anywhere.
Grid convention: ``values[row, col]`` with ``col`` along world x and ``row``
along world y; cell (0, 0) is centered at ``origin``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage


class MapBoundsError(ValueError):
    """Query position outside the valid map area."""


class SlopeCapError(ValueError):
    """Surface normal too far from vertical for a drivable attitude."""


# Hard cap on terrain slope when deriving attitude (85 deg from vertical).
MAX_NORMAL_TILT_COS = np.cos(np.deg2rad(85.0))


@dataclass(frozen=True)
class GridMap2D:
    """Dense row-major scalar grid over a world-aligned rectangle."""

    resolution: float
    origin: tuple[float, float]
    values: np.ndarray  # shape (height, width), float

    def __post_init__(self):
        if self.resolution <= 0.0:
            raise ValueError(f"resolution must be > 0, got {self.resolution}")
        v = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"values must be a non-empty 2-D grid, got shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def extent(self) -> tuple[float, float]:
        """World-frame (x, y) size covered by the grid."""
        return (self.width * self.resolution, self.height * self.resolution)

    def cell_index(self, x, y):
        """Map world coordinates to (col, row). Vectorized; no bounds check."""
        ix = np.floor((np.asarray(x) - self.origin[0]) / self.resolution + 0.5).astype(int)
        iy = np.floor((np.asarray(y) - self.origin[1]) / self.resolution + 0.5).astype(int)
        return ix, iy

    def cell_center(self, ix, iy):
        return (
            self.origin[0] + np.asarray(ix) * self.resolution,
            self.origin[1] + np.asarray(iy) * self.resolution,
        )

    def contains(self, x, y, margin_cells: float = 0.0):
        """True where (x, y) lies inside the map, shrunk by `margin_cells`."""
        gx = (np.asarray(x) - self.origin[0]) / self.resolution
        gy = (np.asarray(y) - self.origin[1]) / self.resolution
        m = margin_cells - 0.5
        return (gx >= m) & (gx <= self.width - 1 - m) & (gy >= m) & (gy <= self.height - 1 - m)

    def value_at(self, x, y, fill=None):
        """Nearest-cell lookup; out-of-map cells get `fill` (error if None)."""
        ix, iy = self.cell_index(x, y)
        inside = (ix >= 0) & (ix < self.width) & (iy >= 0) & (iy < self.height)
        if fill is None and not np.all(inside):
            raise MapBoundsError("lookup outside map bounds")
        ix = np.clip(ix, 0, self.width - 1)
        iy = np.clip(iy, 0, self.height - 1)
        out = self.values[iy, ix]
        if fill is not None:
            out = np.where(inside, out, fill)
        return out

    def interpolate(self, x, y, clip: bool = False):
        """Bilinear interpolation at world (x, y). Vectorized.

        With clip=True, out-of-range queries are clamped to the border cells
        (used by rollouts that are about to be truncated anyway).
        """
        gx = (np.asarray(x, dtype=float) - self.origin[0]) / self.resolution
        gy = (np.asarray(y, dtype=float) - self.origin[1]) / self.resolution
        if not clip:
            bad = (gx < -0.5) | (gx > self.width - 0.5) | (gy < -0.5) | (gy > self.height - 0.5)
            if np.any(bad):
                raise MapBoundsError("interpolation outside map bounds")
        gx = np.clip(gx, 0.0, self.width - 1.0)
        gy = np.clip(gy, 0.0, self.height - 1.0)
        ix0 = np.clip(np.floor(gx).astype(int), 0, max(self.width - 2, 0))
        iy0 = np.clip(np.floor(gy).astype(int), 0, max(self.height - 2, 0))
        ix1 = np.minimum(ix0 + 1, self.width - 1)
        iy1 = np.minimum(iy0 + 1, self.height - 1)
        fx = gx - ix0
        fy = gy - iy0
        v = self.values
        return (
            v[iy0, ix0] * (1 - fx) * (1 - fy)
            + v[iy0, ix1] * fx * (1 - fy)
            + v[iy1, ix0] * (1 - fx) * fy
            + v[iy1, ix1] * fx * fy
        )


@dataclass(frozen=True)
class TerrainTypeMap:
    """Terrain-class label grid co-registered with an elevation map."""

    resolution: float
    origin: tuple[float, float]
    labels: tuple[str, ...]          # index -> class name, e.g. ("grass", "mud")
    values: np.ndarray               # shape (height, width), uint8 label indices

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.uint8))
        if v.ndim != 2:
            raise ValueError("terrain map must be 2-D")
        if len(self.labels) == 0:
            raise ValueError("label table must be non-empty")
        if v.max(initial=0) >= len(self.labels):
            raise ValueError("label index outside label table")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def label_index_at(self, x, y):
        """Nearest-cell label index; out-of-map queries clamp to the border."""
        ix = np.clip(
            np.floor((np.asarray(x) - self.origin[0]) / self.resolution + 0.5).astype(int),
            0, self.width - 1,
        )
        iy = np.clip(
            np.floor((np.asarray(y) - self.origin[1]) / self.resolution + 0.5).astype(int),
            0, self.height - 1,
        )
        return self.values[iy, ix]

    def label_at(self, x, y) -> str:
        return self.labels[int(self.label_index_at(x, y))]


@dataclass(frozen=True)
class TraversabilityWeights:
    """Scale factors for the slope / roughness / step-height cost blend."""

    w1: float = 0.5
    w2: float = 0.25
    w3: float = 0.25
    t_max: float = 1.0
    # Per-feature normalizers (robot-specific, not dictated by the cost form).
    max_slope: float = np.deg2rad(30.0)   # rad
    max_roughness: float = 0.1            # m
    max_step: float = 0.3                 # m

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3) < 0:
            raise ValueError("weights must be non-negative")
        if abs(self.w1 + self.w2 + self.w3 - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")
        if self.t_max <= 0:
            raise ValueError("t_max must be > 0")


@dataclass(frozen=True)
class Attitude:
    """Euler angles (roll, pitch, yaw), ZYX convention."""

    roll: float
    pitch: float
    yaw: float

    def __post_init__(self):
        if abs(self.pitch) >= np.pi / 2:
            raise ValueError("pitch must satisfy |pitch| < pi/2")


def rotation_matrix(att: Attitude) -> np.ndarray:
    """Body-to-world rotation R for ZYX Euler angles."""
    cphi, sphi = np.cos(att.roll), np.sin(att.roll)
    cth, sth = np.cos(att.pitch), np.sin(att.pitch)
    cpsi, spsi = np.cos(att.yaw), np.sin(att.yaw)
    return np.array([
        [cpsi * cth, cpsi * sth * sphi - spsi * cphi, cpsi * sth * cphi + spsi * sphi],
        [spsi * cth, spsi * sth * sphi + cpsi * cphi, spsi * sth * cphi - cpsi * sphi],
        [-sth, cth * sphi, cth * cphi],
    ])


def surface_normal(elevation: GridMap2D, x, y, clip: bool = False):
    """Unit upward normal of the interpolated surface at world (x, y).

    Central finite differences of the bilinear surface with step equal to one
    cell. Vectorized over (x, y); returns shape (..., 3).
    """
    r = elevation.resolution
    if not clip and not np.all(elevation.contains(x, y, margin_cells=1.0)):
        raise MapBoundsError("surface normal needs a one-cell margin inside the map")
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    # one fused lookup for the four finite-difference samples
    h = elevation.interpolate(
        np.stack([xa + r, xa - r, xa, xa]),
        np.stack([ya, ya, ya + r, ya - r]),
        clip=True,
    )
    dzdx = (h[0] - h[1]) / (2 * r)
    dzdy = (h[2] - h[3]) / (2 * r)
    n = np.stack([-dzdx, -dzdy, np.ones_like(dzdx)], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def roll_pitch_from_normal(n, yaw):
    """Vectorized (roll, pitch) such that the body z-axis maps onto `n`.

    `n` has shape (..., 3) with positive z; `yaw` broadcasts against it.
    """
    n = np.asarray(n, dtype=float)
    yaw = np.asarray(yaw, dtype=float)
    if np.any(n[..., 2] <= MAX_NORMAL_TILT_COS):
        raise SlopeCapError("terrain slope exceeds the 85 degree attitude cap")
    cpsi, spsi = np.cos(yaw), np.sin(yaw)
    # Rotate the normal into the yaw-aligned frame, then read off roll/pitch.
    nx = cpsi * n[..., 0] + spsi * n[..., 1]
    ny = -spsi * n[..., 0] + cpsi * n[..., 1]
    nz = n[..., 2]
    roll = np.arcsin(np.clip(-ny, -1.0, 1.0))
    pitch = np.arctan2(nx, nz)
    return roll, pitch


def attitude_from_normal(n, yaw: float) -> Attitude:
    """Attitude whose rotation maps the body z-axis onto the unit normal `n`."""
    roll, pitch = roll_pitch_from_normal(np.asarray(n, dtype=float), yaw)
    return Attitude(float(roll), float(pitch), float(yaw))


def attitude_at(elevation: GridMap2D, x, y, yaw, clip: bool = False):
    """Terrain-consistent (roll, pitch) at world (x, y). Vectorized."""
    n = surface_normal(elevation, x, y, clip=clip)
    return roll_pitch_from_normal(n, yaw)


def geometric_traversability(
    elevation: GridMap2D,
    w: TraversabilityWeights,
    neighborhood: int = 1,
) -> GridMap2D:
    """Per-cell blend of slope, roughness, and step-height costs.

    Each feature is normalized by its robot-specific maximum and clipped to
    [0, 1]; the weighted sum is capped at ``w.t_max``.
    """
    h = elevation.values
    r = elevation.resolution
    if not np.all(np.isfinite(h)):
        raise ValueError("elevation must be finite everywhere")
    size = 2 * neighborhood + 1

    dzdy, dzdx = np.gradient(h, r, r)
    slope = np.arctan(np.hypot(dzdx, dzdy))
    t_s = np.clip(slope / w.max_slope, 0.0, 1.0)

    mean = ndimage.uniform_filter(h, size=size, mode="nearest")
    sqmean = ndimage.uniform_filter(h * h, size=size, mode="nearest")
    std = np.sqrt(np.maximum(sqmean - mean * mean, 0.0))
    t_r = np.clip(std / w.max_roughness, 0.0, 1.0)

    hmax = ndimage.maximum_filter(h, size=size, mode="nearest")
    hmin = ndimage.minimum_filter(h, size=size, mode="nearest")
    step = np.maximum(hmax - h, h - hmin)
    t_h = np.clip(step / w.max_step, 0.0, 1.0)

    t_geo = np.minimum(w.w1 * t_s + w.w2 * t_r + w.w3 * t_h, w.t_max)
    return GridMap2D(resolution=r, origin=elevation.origin, values=t_geo)


def submap(cost: GridMap2D, center: tuple[float, float], s: int, fill: float) -> np.ndarray:
    """s x s patch of cells around the cell containing `center`.

    Cells outside the map are filled with `fill` (unknown = untraversable).
    """
    if s < 1 or s % 2 == 0:
        raise ValueError(f"patch size must be odd and >= 1, got {s}")
    icx, icy = cost.cell_index(center[0], center[1])
    half = s // 2
    cols = np.arange(icx - half, icx + half + 1)
    rows = np.arange(icy - half, icy + half + 1)
    inside = (rows[:, None] >= 0) & (rows[:, None] < cost.height) & \
             (cols[None, :] >= 0) & (cols[None, :] < cost.width)
    patch = np.full((s, s), float(fill))
    rr = np.clip(rows, 0, cost.height - 1)
    cc = np.clip(cols, 0, cost.width - 1)
    vals = cost.values[np.ix_(rr, cc)]
    patch[inside] = vals[inside]
    return patch


def submap_centers(cost: GridMap2D, center: tuple[float, float], s: int):
    """World coordinates of the cell centers of ``submap(cost, center, s)``."""
    icx, icy = cost.cell_index(center[0], center[1])
    half = s // 2
    xs = cost.origin[0] + (np.arange(icx - half, icx + half + 1)) * cost.resolution
    ys = cost.origin[1] + (np.arange(icy - half, icy + half + 1)) * cost.resolution
    return np.meshgrid(xs, ys)
