"""Synthetic orbiting depth scanner.

Stands in for the depth camera on a mobile base: a circular trajectory of
look-at poses, a ray-traced depth renderer, and a pose-noise model that
plays the role of the gyro/compass/accelerometer reading.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .geometry import CameraIntrinsics, DepthFrame, RigidTransform, TriangleMesh, look_at, rotvec_to_matrix


@dataclass(frozen=True)
class SensorNoiseModel:
    """Depth and pose noise. Defaults approximate a Kinect v2 at about 1 m."""

    depth_sigma: float = 0.002
    depth_dropout: float = 0.005
    angle_sigma: float = 0.01  # degrees
    translation_sigma: float = 0.002
    seed: int = 0

    def __post_init__(self):
        if min(self.depth_sigma, self.angle_sigma, self.translation_sigma) < 0:
            raise ValueError("noise sigmas must be non-negative")
        if not 0.0 <= self.depth_dropout <= 1.0:
            raise ValueError("depth_dropout must lie in [0, 1]")

    @classmethod
    def noiseless(cls, seed: int = 0) -> "SensorNoiseModel":
        return cls(0.0, 0.0, 0.0, 0.0, seed)


@dataclass(frozen=True, eq=False)
class Trajectory:
    poses: list
    radius: float
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    height: float = 0.0

    def __len__(self) -> int:
        return len(self.poses)

    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)

    def with_poses(self, poses) -> "Trajectory":
        return Trajectory(list(poses), self.radius, self.center, self.height)


def circular_trajectory(center, radius: float, height: float, n_frames: int) -> Trajectory:
    """``n_frames`` look-at poses evenly spaced in azimuth.

    Camera ``i`` sits at ``center + (r cos a_i, r sin a_i, height)`` with
    ``a_i = 2 pi i / n_frames`` and looks straight at ``center``.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    if n_frames < 2:
        raise ValueError("need at least 2 frames")
    center = np.asarray(center, dtype=np.float64).reshape(3)
    poses = []
    for i in range(n_frames):
        a = 2.0 * np.pi * i / n_frames
        eye = center + np.array([radius * np.cos(a), radius * np.sin(a), height])
        poses.append(look_at(eye, center))
    return Trajectory(poses, float(radius), center, float(height))


def perturb_poses(traj: Trajectory, noise: SensorNoiseModel) -> Trajectory:
    """Simulated motion-sensor reading of each pose.

    Each rotation is pre-multiplied by a rotation of angle ~ N(0, angle_sigma)
    about a uniformly random axis; each translation gets N(0, translation_sigma)
    per component.
    """
    rng = np.random.default_rng([noise.seed, 0x5E45])
    out = []
    for pose in traj.poses:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = np.radians(rng.normal(0.0, noise.angle_sigma)) if noise.angle_sigma > 0 else 0.0
        dt = rng.normal(0.0, noise.translation_sigma, size=3) if noise.translation_sigma > 0 else np.zeros(3)
        if angle == 0.0 and not dt.any():
            out.append(pose)
            continue
        R = rotvec_to_matrix(axis * angle) @ pose.rotation
        out.append(RigidTransform(R, pose.translation + dt))
    return traj.with_poses(out)


_EPS_DET = 1e-18
_EPS_BARY = 1e-12
_NEAR = 1e-6


@numba.njit(cache=True)
def _ray_triangle(dx, dy, dz, a, b, c):
    """Moller-Trumbore from the origin along (dx, dy, dz); both faces hit.

    Returns the ray parameter (the camera z for unit-z rays) or +inf on miss.
    """
    e1x = b[0] - a[0]
    e1y = b[1] - a[1]
    e1z = b[2] - a[2]
    e2x = c[0] - a[0]
    e2y = c[1] - a[1]
    e2z = c[2] - a[2]
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if abs(det) < _EPS_DET:
        return np.inf
    inv = 1.0 / det
    tx = -a[0]
    ty = -a[1]
    tz = -a[2]
    u = (tx * px + ty * py + tz * pz) * inv
    if u < -_EPS_BARY or u > 1.0 + _EPS_BARY:
        return np.inf
    qx = ty * e1z - tz * e1y
    qy = tz * e1x - tx * e1z
    qz = tx * e1y - ty * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < -_EPS_BARY or u + v > 1.0 + _EPS_BARY:
        return np.inf
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t <= _NEAR:
        return np.inf
    return t


@numba.njit(cache=True)
def _rasterize(tri, fx, fy, cx, cy, width, height):
    depth = np.full((height, width), np.inf)
    for k in range(tri.shape[0]):
        a = tri[k, 0]
        b = tri[k, 1]
        c = tri[k, 2]
        if a[2] <= _NEAR and b[2] <= _NEAR and c[2] <= _NEAR:
            continue
        if a[2] <= _NEAR or b[2] <= _NEAR or c[2] <= _NEAR:
            u0, u1, v0, v1 = 0, width - 1, 0, height - 1
        else:
            ua = fx * a[0] / a[2] + cx
            ub = fx * b[0] / b[2] + cx
            uc = fx * c[0] / c[2] + cx
            va = fy * a[1] / a[2] + cy
            vb = fy * b[1] / b[2] + cy
            vc = fy * c[1] / c[2] + cy
            u0 = max(int(np.floor(min(ua, ub, uc))) - 1, 0)
            u1 = min(int(np.ceil(max(ua, ub, uc))) + 1, width - 1)
            v0 = max(int(np.floor(min(va, vb, vc))) - 1, 0)
            v1 = min(int(np.ceil(max(va, vb, vc))) + 1, height - 1)
        for v in range(v0, v1 + 1):
            dy = (v - cy) / fy
            for u in range(u0, u1 + 1):
                dx = (u - cx) / fx
                t = _ray_triangle(dx, dy, 1.0, a, b, c)
                if t < depth[v, u]:
                    depth[v, u] = t
    return depth


@numba.njit(cache=True)
def _brute_force(tri, fx, fy, cx, cy, width, height):
    depth = np.full((height, width), np.inf)
    for v in range(height):
        dy = (v - cy) / fy
        for u in range(width):
            dx = (u - cx) / fx
            best = np.inf
            for k in range(tri.shape[0]):
                t = _ray_triangle(dx, dy, 1.0, tri[k, 0], tri[k, 1], tri[k, 2])
                if t < best:
                    best = t
            depth[v, u] = best
    return depth


def _camera_triangles(mesh: TriangleMesh, pose: RigidTransform) -> np.ndarray:
    if mesh.is_empty:
        raise ValueError("cannot render an empty mesh")
    v = pose.inverse().apply(mesh.vertices)
    return np.ascontiguousarray(v[mesh.faces])


def render_depth_exact(mesh: TriangleMesh, pose: RigidTransform, K: CameraIntrinsics) -> np.ndarray:
    """Noise-free z-depth image, +inf where the ray misses."""
    tri = _camera_triangles(mesh, pose)
    return _rasterize(tri, K.fx, K.fy, K.cx, K.cy, K.width, K.height)


def render_depth_brute_force(mesh: TriangleMesh, pose: RigidTransform, K: CameraIntrinsics) -> np.ndarray:
    """Every pixel against every triangle. Reference for small meshes only."""
    tri = _camera_triangles(mesh, pose)
    return _brute_force(tri, K.fx, K.fy, K.cx, K.cy, K.width, K.height)


def render_depth(
    mesh: TriangleMesh,
    pose: RigidTransform,
    K: CameraIntrinsics,
    noise: SensorNoiseModel | None = None,
    frame_index: int = 0,
) -> DepthFrame:
    """Depth frame seen from camera-to-world ``pose``.

    Noise is drawn from a generator seeded by ``(noise.seed, frame_index)`` so
    every frame of a sequence is reproducible on its own.
    """
    depth = render_depth_exact(mesh, pose, K)
    valid = np.isfinite(depth)
    if noise is not None and (noise.depth_sigma > 0 or noise.depth_dropout > 0):
        rng = np.random.default_rng([noise.seed, frame_index])
        jitter = rng.normal(0.0, 1.0, size=depth.shape)
        drop = rng.random(size=depth.shape) < noise.depth_dropout
        depth = np.where(valid, depth + noise.depth_sigma * jitter, 0.0)
        valid &= ~drop & (depth > 0)
    return DepthFrame(np.where(valid, depth, 0.0), valid)
