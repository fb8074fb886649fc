"""Rigid-body math, the hemisphere view grid and nearest-neighbor queries.

Conventions: rotations are unit quaternions (w, x, y, z), translations in mm.
Camera frames follow the usual CV convention: x right, y down, z along the
optical axis. Grid cameras look at the grid center.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q)


def quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(R):
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(R[i, i] - R[j, j] - R[k, k] + 1.0) * 2
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0:
        q = -q
    return quat_normalize(q)


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def random_quat(rng):
    """Uniform random rotation (Shoemake's subgroup algorithm)."""
    u1, u2, u3 = rng.random(3)
    a, b = np.sqrt(1 - u1), np.sqrt(u1)
    return np.array([a * np.sin(2 * np.pi * u2), a * np.cos(2 * np.pi * u2),
                     b * np.sin(2 * np.pi * u3), b * np.cos(2 * np.pi * u3)])


@dataclass(frozen=True, eq=False)
class Pose6D:
    """Rigid transform: rotation quaternion (w,x,y,z) + translation in mm."""

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", quat_normalize(self.q))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64))

    @staticmethod
    def identity() -> "Pose6D":
        return Pose6D(np.array([1.0, 0, 0, 0]), np.zeros(3))

    @staticmethod
    def from_matrix(R, t) -> "Pose6D":
        return Pose6D(quat_from_matrix(R), t)

    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def compose(self, other: "Pose6D") -> "Pose6D":
        """self ∘ other: applies `other` first, then `self`."""
        return Pose6D(quat_mul(self.q, other.q), self.R @ other.t + self.t)

    def inverse(self) -> "Pose6D":
        qc = quat_conj(self.q)
        return Pose6D(qc, -(quat_to_matrix(qc) @ self.t))

    def apply(self, pts: np.ndarray) -> np.ndarray:
        """Transform an (n,3) array of points."""
        return pts @ self.R.T + self.t

    def rotate(self, vecs: np.ndarray) -> np.ndarray:
        return vecs @ self.R.T


def pose_compose(a: Pose6D, b: Pose6D) -> Pose6D:
    return a.compose(b)


@dataclass(frozen=True, eq=False)
class PointSet:
    """Points in mm with parallel unit normals, both (n,3)."""

    points: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=np.float64).reshape(-1, 3))
        object.__setattr__(self, "normals", np.asarray(self.normals, dtype=np.float64).reshape(-1, 3))
        if len(self.points) != len(self.normals):
            raise ValueError("points and normals must be parallel")

    def __len__(self):
        return len(self.points)

    def save_xyz(self, path):
        rows = np.hstack([self.points, self.normals])
        np.savetxt(path, rows, fmt="%.6f")

    @staticmethod
    def load_xyz(path) -> "PointSet":
        rows = np.loadtxt(path, dtype=np.float64).reshape(-1, 6)
        return PointSet(rows[:, :3], rows[:, 3:])


def transform_points(pose: Pose6D, ps: PointSet) -> PointSet:
    """Rotate+translate points; normals are rotated only."""
    return PointSet(pose.apply(ps.points), pose.rotate(ps.normals))


class NeighborIndex:
    """KD-tree over a PointSet; results match exhaustive linear scan."""

    def __init__(self, ps: PointSet):
        self.ps = ps
        self._tree = cKDTree(ps.points)

    def query(self, q, eps_mm: float):
        """Nearest stored point iff within eps_mm, else None."""
        dist, idx = self._tree.query(np.asarray(q, dtype=np.float64))
        if dist < eps_mm:
            return self.ps.points[idx], self.ps.normals[idx], float(dist)
        return None

    def query_many(self, qs: np.ndarray):
        """Vectorized nearest neighbor: (distances, indices) for (n,3) queries."""
        dist, idx = self._tree.query(np.asarray(qs, dtype=np.float64))
        return dist, idx


def nn_query(index: NeighborIndex, q, eps_mm: float):
    return index.query(q, eps_mm)


def _look_at_cam_from_world(position, center):
    """Camera-from-world pose for a camera at `position` looking at `center`."""
    position = np.asarray(position, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    fwd = center - position
    fwd = fwd / np.linalg.norm(fwd)
    up_hint = np.array([0.0, 0.0, 1.0])
    u = up_hint - np.dot(up_hint, fwd) * fwd
    if np.linalg.norm(u) < 1e-6:
        # near-polar view: world z is parallel to the axis, fall back to world x
        up_hint = np.array([1.0, 0.0, 0.0])
        u = up_hint - np.dot(up_hint, fwd) * fwd
    u = u / np.linalg.norm(u)
    down = -u
    right = np.cross(down, fwd)
    R_wc = np.column_stack([right, down, fwd])  # world-from-camera
    R_cw = R_wc.T
    return Pose6D.from_matrix(R_cw, -(R_cw @ position))


def viewpoint_position(radius, azimuth, elevation, center):
    direction = np.array([
        np.cos(elevation) * np.cos(azimuth),
        np.cos(elevation) * np.sin(azimuth),
        np.sin(elevation),
    ])
    return np.asarray(center, dtype=np.float64) + radius * direction


@dataclass(frozen=True, eq=False)
class ViewGrid:
    """Hemisphere of viewpoints, all looking at `center`."""

    radius: float
    azimuth_levels: int
    elevation_levels: int
    center: np.ndarray
    azimuths: np.ndarray = field(repr=False)
    elevations: np.ndarray = field(repr=False)
    cam_from_world: tuple = field(repr=False)

    def __len__(self):
        return len(self.azimuths)

    def position(self, i: int) -> np.ndarray:
        return viewpoint_position(self.radius, self.azimuths[i], self.elevations[i], self.center)

    def positions(self) -> np.ndarray:
        return np.stack([self.position(i) for i in range(len(self))])

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius


def build_grid(radius, az_levels, el_levels, center=(0.0, 0.0, 0.0)) -> ViewGrid:
    """Uniform azimuths in [0, 2pi); elevations in an open band above the equator.

    Elevation k sits at (k+1)*(pi/2)/(el_levels+1), excluding both the equator
    and the pole. Index = el_level * az_levels + az_level, lowest elevation
    first, so index 0 is (azimuth 0, lowest elevation).
    """
    if az_levels < 1 or el_levels < 1:
        raise ValueError("az_levels and el_levels must be >= 1")
    if radius <= 0:
        raise ValueError("radius must be positive")
    center = np.asarray(center, dtype=np.float64)
    az_vals = np.arange(az_levels) * (2 * np.pi / az_levels)
    el_vals = (np.arange(el_levels) + 1) * (np.pi / 2) / (el_levels + 1)
    azs, els, poses = [], [], []
    for el in el_vals:
        for az in az_vals:
            pos = viewpoint_position(radius, az, el, center)
            azs.append(az)
            els.append(el)
            poses.append(_look_at_cam_from_world(pos, center))
    return ViewGrid(float(radius), az_levels, el_levels, center,
                    np.array(azs), np.array(els), tuple(poses))


def _direction(azimuth, elevation):
    return np.array([
        np.cos(elevation) * np.cos(azimuth),
        np.cos(elevation) * np.sin(azimuth),
        np.sin(elevation),
    ])


_grid_dirs_cache: dict = {}


def _grid_directions(grid: ViewGrid) -> np.ndarray:
    dirs = _grid_dirs_cache.get(grid)
    if dirs is None:
        dirs = np.stack([_direction(a, e) for a, e in zip(grid.azimuths, grid.elevations)])
        _grid_dirs_cache[grid] = dirs
    return dirs


def closest_viewpoint(grid: ViewGrid, azimuth: float, elevation: float) -> int:
    """Grid index minimizing central angle to the requested direction.

    Azimuth wraps mod 2pi; elevation is clamped to the grid band. Ties break
    to the lowest index.
    """
    azimuth = azimuth % (2 * np.pi)
    elevation = float(np.clip(elevation, grid.elevations.min(), grid.elevations.max()))
    d = _direction(azimuth, elevation)
    dots = np.clip(_grid_directions(grid) @ d, -1.0, 1.0)
    return int(np.argmax(dots))


def geodesic_distance(grid: ViewGrid, i: int, j: int) -> float:
    """Great-circle distance (mm) between viewpoints i and j on the hemisphere."""
    if i == j:
        return 0.0
    ui = (grid.position(i) - grid.center) / grid.radius
    uj = (grid.position(j) - grid.center) / grid.radius
    return grid.radius * float(np.arccos(np.clip(np.dot(ui, uj), -1.0, 1.0)))
