"""Shared geometric types: rigid poses, pinhole intrinsics, depth frames,
point clouds and triangle meshes.

Everything is in meters. Camera frames follow the usual vision convention:
+z along the optical axis, +x right, +y down in the image.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _frozen(a, dtype=np.float64) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation + translation, mapping x -> R @ x + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = _frozen(self.rotation)
        t = _frozen(self.translation).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(rotvec_to_matrix(rotvec), translation)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def as_row(self) -> np.ndarray:
        """The 12 numbers of the 3x4 [R|t] block, row-major."""
        return self.as_matrix()[:3].reshape(12)

    @classmethod
    def from_row(cls, row) -> "RigidTransform":
        m = np.asarray(row, dtype=np.float64).reshape(3, 4)
        return cls(m[:, :3], m[:, 3])

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def apply_vectors(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    @property
    def position(self) -> np.ndarray:
        return self.translation

    def rotation_angle(self) -> float:
        """Rotation angle in radians."""
        c = (np.trace(self.rotation) - 1.0) / 2.0
        return float(np.arccos(np.clip(c, -1.0, 1.0)))

    def is_valid(self, tol: float = 1e-9) -> bool:
        R = self.rotation
        return bool(
            np.allclose(R.T @ R, np.eye(3), atol=tol, rtol=0)
            and abs(np.linalg.det(R) - 1.0) <= tol
        )


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform that applies ``b`` first, then ``a``."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotvec_to_matrix(rotvec) -> np.ndarray:
    """Rodrigues' formula."""
    w = np.asarray(rotvec, dtype=np.float64).reshape(3)
    theta = np.linalg.norm(w)
    if theta < 1e-15:
        return np.eye(3) + skew(w)
    k = skew(w / theta)
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def orthonormalize(R) -> np.ndarray:
    """Closest proper rotation to ``R`` in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=np.float64))
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt


def rotation_between(a, b) -> np.ndarray:
    """Smallest rotation taking unit vector ``a`` onto unit vector ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    c = float(np.dot(a, b))
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        # antiparallel: half turn about any axis orthogonal to a
        helper = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        axis = np.cross(a, helper)
        axis /= np.linalg.norm(axis)
        return 2.0 * np.outer(axis, axis) - np.eye(3)
    return rotvec_to_matrix(axis / s * np.arctan2(s, c))


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> RigidTransform:
    """Camera-to-world pose of a camera at ``eye`` whose optical axis hits ``target``.

    Image +y points as close to world ``-up`` as possible.
    """
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(x) < 1e-12:
        x = np.cross(z, np.array([0.0, 1.0, 0.0]))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return RigidTransform(np.column_stack([x, y, z]), eye)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float) -> "CameraIntrinsics":
        f = 0.5 * width / np.tan(np.radians(hfov_deg) / 2.0)
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)

    @classmethod
    def kinect_v2(cls) -> "CameraIntrinsics":
        # nominal Kinect v2 depth camera, 512x424 @ ~70.6 deg horizontal
        return cls(365.0, 365.0, 255.5, 211.5, 512, 424)

    def pixel_rays(self) -> np.ndarray:
        """(H, W, 3) ray directions with unit z component."""
        u = (np.arange(self.width, dtype=np.float64) - self.cx) / self.fx
        v = (np.arange(self.height, dtype=np.float64) - self.cy) / self.fy
        rays = np.empty((self.height, self.width, 3))
        rays[..., 0] = u[None, :]
        rays[..., 1] = v[:, None]
        rays[..., 2] = 1.0
        return rays

    def project(self, points_cam) -> np.ndarray:
        """Project camera-frame points to continuous pixel coordinates (u, v)."""
        p = np.asarray(points_cam, dtype=np.float64)
        z = p[..., 2]
        return np.stack([self.fx * p[..., 0] / z + self.cx, self.fy * p[..., 1] / z + self.cy], axis=-1)


@dataclass(frozen=True, eq=False)
class DepthFrame:
    """Depth image in meters with an explicit validity mask.

    Values under invalid pixels carry no meaning and are stored as 0.
    """

    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        d = np.array(self.depth, dtype=np.float64, copy=True)
        m = np.array(self.valid, dtype=bool, copy=True)
        if d.ndim != 2 or d.shape != m.shape:
            raise ValueError("depth and validity mask must be 2D arrays of equal shape")
        m &= np.isfinite(d) & (d > 0)
        d[~m] = 0.0
        d.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "depth", d)
        object.__setattr__(self, "valid", m)

    @classmethod
    def from_array(cls, depth) -> "DepthFrame":
        """Wrap a depth array, treating non-finite and non-positive values as invalid."""
        d = np.asarray(depth, dtype=np.float64)
        return cls(np.where(np.isfinite(d), d, 0.0), np.isfinite(d) & (d > 0))

    @classmethod
    def empty(cls, width: int, height: int) -> "DepthFrame":
        return cls(np.zeros((height, width)), np.zeros((height, width), dtype=bool))

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    def check_intrinsics(self, K: CameraIntrinsics) -> None:
        if (self.width, self.height) != (K.width, K.height):
            raise ValueError(
                f"frame is {self.width}x{self.height} but intrinsics are {K.width}x{K.height}"
            )


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        p = _frozen(self.points).reshape(-1, 3)
        object.__setattr__(self, "points", p)
        if self.normals is not None:
            n = _frozen(self.normals).reshape(-1, 3)
            if len(n) != len(p):
                raise ValueError("normals and points differ in count")
            object.__setattr__(self, "normals", n)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    def transformed(self, T: RigidTransform) -> "PointCloud":
        n = None if self.normals is None else T.apply_vectors(self.normals)
        return PointCloud(T.apply(self.points), n)

    def subset(self, idx) -> "PointCloud":
        n = None if self.normals is None else self.normals[idx]
        return PointCloud(self.points[idx], n)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    colors: np.ndarray | None = None

    def __post_init__(self):
        v = _frozen(self.vertices).reshape(-1, 3)
        f = _frozen(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(f):
            if f.min() < 0 or f.max() >= len(v):
                raise ValueError("face index out of range")
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise ValueError("face references the same vertex twice")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if self.colors is not None:
            c = _frozen(np.clip(np.asarray(self.colors), 0, 255), dtype=np.uint8).reshape(-1, 3)
            if len(c) != len(v):
                raise ValueError("one color per vertex required")
            object.__setattr__(self, "colors", c)

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def triangles(self) -> np.ndarray:
        """(M, 3, 3) corner coordinates."""
        return self.vertices[self.faces]

    def face_normals(self) -> np.ndarray:
        tri = self.triangles()
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)

    def face_areas(self) -> np.ndarray:
        tri = self.triangles()
        return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)

    def signed_volume(self) -> float:
        tri = self.triangles()
        return float(np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6.0)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def bbox_diagonal(self) -> float:
        lo, hi = self.bounds()
        return float(np.linalg.norm(hi - lo))

    def edges(self) -> np.ndarray:
        """Undirected edges, one row per (face, side), sorted within the row."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        return np.sort(e, axis=1)

    def is_watertight(self) -> bool:
        _, counts = np.unique(self.edges(), axis=0, return_counts=True)
        return bool(len(counts) and np.all(counts == 2))

    def euler_characteristic(self) -> int:
        n_edges = len(np.unique(self.edges(), axis=0))
        return len(self.vertices) - n_edges + len(self.faces)

    def transformed(self, T: RigidTransform) -> "TriangleMesh":
        return TriangleMesh(T.apply(self.vertices), self.faces, self.colors)

    def with_colors(self, colors) -> "TriangleMesh":
        return TriangleMesh(self.vertices, self.faces, colors)

    def submesh(self, vertex_mask) -> "TriangleMesh":
        """Faces whose three corners are all in ``vertex_mask``; unused vertices dropped."""
        keep = np.asarray(vertex_mask, dtype=bool)
        fmask = keep[self.faces].all(axis=1)
        faces = self.faces[fmask]
        used = np.zeros(len(self.vertices), dtype=bool)
        used[faces.ravel()] = True
        remap = -np.ones(len(self.vertices), dtype=np.int64)
        remap[used] = np.arange(used.sum())
        colors = None if self.colors is None else self.colors[used]
        return TriangleMesh(self.vertices[used], remap[faces], colors)

    @staticmethod
    def concatenate(meshes) -> "TriangleMesh":
        verts, faces, off = [], [], 0
        for m in meshes:
            verts.append(m.vertices)
            faces.append(m.faces + off)
            off += len(m.vertices)
        return TriangleMesh(np.concatenate(verts), np.concatenate(faces))


def backproject(frame: DepthFrame, K: CameraIntrinsics, pose: RigidTransform | None = None) -> PointCloud:
    """One world point per valid pixel, in row-major pixel order."""
    frame.check_intrinsics(K)
    pts = backproject_map(frame, K)[frame.valid]
    if pose is not None:
        pts = pose.apply(pts)
    return PointCloud(pts)


def backproject_map(frame: DepthFrame, K: CameraIntrinsics) -> np.ndarray:
    """Organized (H, W, 3) camera-frame points; invalid pixels hold zeros."""
    frame.check_intrinsics(K)
    return K.pixel_rays() * frame.depth[..., None]


def normal_map(
    frame: DepthFrame,
    K: CameraIntrinsics,
    window: int = 1,
    max_depth_jump: float | None = 0.05,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Organized points, normals and normal-validity mask in the camera frame.

    Normals come from the cross product of the horizontal and vertical
    central differences over ``window`` pixels, flipped to face the camera.
    A pixel gets a normal only when itself and its four neighbors are valid
    and (optionally) no neighbor jumps by more than ``max_depth_jump``.
    """
    pts = backproject_map(frame, K)
    h, w = frame.height, frame.width
    s = window
    ok = np.zeros((h, w), dtype=bool)
    normals = np.zeros((h, w, 3))
    if h <= 2 * s or w <= 2 * s:
        return pts, normals, ok
    c = (slice(s, h - s), slice(s, w - s))
    right, left = (slice(s, h - s), slice(2 * s, w)), (slice(s, h - s), slice(0, w - 2 * s))
    down, up = (slice(2 * s, h), slice(s, w - s)), (slice(0, h - 2 * s), slice(s, w - s))
    v = frame.valid
    inner = v[c] & v[right] & v[left] & v[down] & v[up]
    if max_depth_jump is not None:
        d = frame.depth
        for nb in (right, left, down, up):
            inner &= np.abs(d[nb] - d[c]) <= max_depth_jump
    n = np.cross(pts[right] - pts[left], pts[down] - pts[up])
    norm = np.linalg.norm(n, axis=-1)
    inner &= norm > 1e-12
    n = np.divide(n, norm[..., None], out=np.zeros_like(n), where=inner[..., None])
    facing = np.einsum("...i,...i->...", n, pts[c])
    n[facing > 0] *= -1.0
    normals[c] = n
    ok[c] = inner
    return pts, normals, ok


def estimate_normals(frame: DepthFrame, K: CameraIntrinsics, window: int = 1,
                     max_depth_jump: float | None = 0.05) -> PointCloud:
    """Camera-frame cloud of the pixels that received a valid normal."""
    pts, normals, ok = normal_map(frame, K, window, max_depth_jump)
    return PointCloud(pts[ok], normals[ok])
