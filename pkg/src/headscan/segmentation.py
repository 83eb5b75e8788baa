"""Automatic head selection.

Both selectors align a plane with the x-y plane, build a prism whose
cross-section is the convex hull of the sensor-pose loop, and keep the
points inside it:

* on a table: the prism runs from just above the RANSAC table plane up to the
  highest sensor pose;
* on a person: a virtual plane is fitted to the points nearest the pose
  centroid (the top of the head) and the prism runs from ``offset_head`` below
  it upward.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud, RigidTransform, rotation_between
from .scanner import Trajectory


class SelectionError(RuntimeError):
    """Selection produced nothing, or its inputs are degenerate."""


@dataclass(frozen=True)
class Plane:
    """Hessian normal form ``a x + b y + c z + d = 0`` with a unit normal."""

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        n = np.array([self.a, self.b, self.c], dtype=np.float64)
        norm = np.linalg.norm(n)
        if not norm > 0:
            raise ValueError("plane normal must be non-zero")
        n /= norm
        object.__setattr__(self, "a", float(n[0]))
        object.__setattr__(self, "b", float(n[1]))
        object.__setattr__(self, "c", float(n[2]))
        object.__setattr__(self, "d", float(self.d / norm))

    @classmethod
    def from_point_normal(cls, point, normal) -> "Plane":
        n = np.asarray(normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        return cls(n[0], n[1], n[2], -float(n @ np.asarray(point, dtype=np.float64)))

    @property
    def normal(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])

    def signed_distance(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.normal + self.d

    def flipped(self) -> "Plane":
        return Plane(-self.a, -self.b, -self.c, -self.d)

    def oriented_toward(self, point) -> "Plane":
        """Same plane, normal pointing to the side containing ``point``."""
        return self if self.signed_distance(np.asarray(point)[None])[0] >= 0 else self.flipped()


@dataclass(frozen=True, eq=False)
class Prism:
    """Convex polygon in the aligned frame's x-y plane, extruded over [z_min, z_max]."""

    base_polygon: np.ndarray
    z_min: float
    z_max: float
    include_z_min: bool = True

    def __post_init__(self):
        poly = np.asarray(self.base_polygon, dtype=np.float64).reshape(-1, 2)
        if len(poly) < 3 or polygon_area(poly) <= 0:
            raise ValueError("prism base must be a counter-clockwise polygon")
        if not self.z_min < self.z_max:
            raise ValueError("prism needs z_min < z_max")
        object.__setattr__(self, "base_polygon", poly)

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        z = p[:, 2]
        above = z >= self.z_min if self.include_z_min else z > self.z_min
        return above & (z <= self.z_max) & points_in_convex_polygon(p[:, :2], self.base_polygon)


def fit_plane_lstsq(points) -> Plane:
    """Total least-squares plane through ``points`` (smallest principal axis)."""
    p = np.asarray(points, dtype=np.float64)
    if len(p) < 3:
        raise SelectionError("plane fit needs at least 3 points")
    c = p.mean(axis=0)
    _, s, Vt = np.linalg.svd(p - c, full_matrices=False)
    if s[1] <= 1e-12 * max(s[0], 1e-300):
        raise SelectionError("plane fit on collinear points")
    return Plane.from_point_normal(c, Vt[2])


def ransac_plane(
    cloud: PointCloud | np.ndarray,
    dist_thresh: float,
    max_iters: int = 1000,
    seed: int = 0,
) -> tuple[Plane, np.ndarray]:
    """Largest-consensus plane, refit by least squares on its inliers.

    Returns the plane and the sorted indices of points within ``dist_thresh``
    of the refit plane.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    n = len(pts)
    if n < 3:
        raise ValueError("RANSAC needs at least 3 points")
    rng = np.random.default_rng(seed)
    best_count, best_plane = -1, None
    for _ in range(max_iters):
        i, j, k = rng.choice(n, size=3, replace=False)
        normal = np.cross(pts[j] - pts[i], pts[k] - pts[i])
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            continue
        normal /= norm
        count = int(np.count_nonzero(np.abs((pts - pts[i]) @ normal) <= dist_thresh))
        if count > best_count:
            best_count, best_plane = count, Plane.from_point_normal(pts[i], normal)
    if best_plane is None:
        raise ValueError("every RANSAC sample was collinear")
    inliers = np.flatnonzero(np.abs(best_plane.signed_distance(pts)) <= dist_thresh)
    try:
        refit = fit_plane_lstsq(pts[inliers])
    except SelectionError:
        refit = best_plane
    if refit.normal @ best_plane.normal < 0:
        refit = refit.flipped()
    return refit, np.flatnonzero(np.abs(refit.signed_distance(pts)) <= dist_thresh)


def plane_align_transform(plane: Plane) -> RigidTransform:
    """Pure rotation taking the plane normal to +z; the plane maps to ``z = -d``."""
    return RigidTransform(rotation_between(plane.normal, (0.0, 0.0, 1.0)), np.zeros(3))


def _cross2(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull_2d(points) -> np.ndarray:
    """Counter-clockwise hull (Andrew's monotone chain), collinear points dropped."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(p) < 3:
        raise ValueError("convex hull needs at least 3 points")
    pts = sorted(set(map(tuple, p)))
    if len(pts) < 3:
        raise ValueError("convex hull needs at least 3 distinct points")

    def half(seq):
        chain = []
        for q in seq:
            while len(chain) >= 2 and _cross2(chain[-2], chain[-1], q) <= 0:
                chain.pop()
            chain.append(q)
        return chain

    lower = half(pts)
    upper = half(reversed(pts))
    hull = np.array(lower[:-1] + upper[:-1])
    if len(hull) < 3:
        raise ValueError("all points are collinear")
    return hull


def polygon_area(poly) -> float:
    """Signed shoelace area; positive for counter-clockwise polygons."""
    p = np.asarray(poly, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def points_in_convex_polygon(xy, poly) -> np.ndarray:
    """Inclusive membership test against a counter-clockwise convex polygon."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    inside = np.ones(len(xy), dtype=bool)
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        inside &= (b[0] - a[0]) * (xy[:, 1] - a[1]) - (b[1] - a[1]) * (xy[:, 0] - a[0]) >= 0
    return inside


@dataclass(frozen=True, eq=False)
class Selection:
    """Indices of the kept points plus the geometry that selected them."""

    indices: np.ndarray
    cloud: PointCloud
    transform: RigidTransform
    prism: Prism
    plane: Plane


def _pose_positions(poses) -> np.ndarray:
    if isinstance(poses, Trajectory):
        return poses.positions()
    pts = [p.translation if isinstance(p, RigidTransform) else p for p in poses]
    return np.asarray(pts, dtype=np.float64).reshape(-1, 3)


def select_head_on_table(
    full: PointCloud,
    plane: Plane,
    plane_inliers: PointCloud | None,
    poses,
    dist_thresh: float = 0.005,
) -> Selection:
    """Points standing on the table inside the sensor-pose loop.

    The table plane, the full cloud and the poses are rotated so the table
    normal (oriented toward the poses) is +z. The prism base is the hull of
    the rotated pose positions; it spans ``(table_z + dist_thresh, max pose z]``
    where ``table_z`` comes from the plane equation. ``plane_inliers`` is
    accepted for callers that keep it around but does not move the bounds.
    Selected points are returned in the original frame, unchanged.
    """
    cam = _pose_positions(poses)
    if len(cam) < 3:
        raise SelectionError("need at least 3 sensor poses to close a loop")
    plane = plane.oriented_toward(cam.mean(axis=0))
    T = plane_align_transform(plane)
    table_z = -plane.d
    full_aligned = T.apply(full.points)
    cam_aligned = T.apply(cam)
    z_top = float(cam_aligned[:, 2].max())
    if not z_top > table_z + dist_thresh:
        raise SelectionError("sensor poses are not above the table plane")
    prism = Prism(convex_hull_2d(cam_aligned[:, :2]), table_z + dist_thresh, z_top, include_z_min=False)
    idx = np.flatnonzero(prism.contains(full_aligned))
    if len(idx) == 0:
        raise SelectionError("no points above the table inside the pose loop")
    return Selection(idx, full.subset(idx), T, prism, plane)


MIN_LOOP_AREA_RATIO = 0.05


def _loop_base(cam, cam_aligned, full_aligned) -> np.ndarray:
    """Hull of the pose loop seen along the virtual-plane normal.

    When that normal lies almost in the loop's own plane the loop collapses to
    a sliver (its projected area falls under ``MIN_LOOP_AREA_RATIO`` of its
    true area) and would cut away everything; the lateral bound is then
    dropped by returning a rectangle around the whole cloud.
    """
    own = np.asarray(cam, dtype=np.float64)
    c = own.mean(axis=0)
    _, _, Vt = np.linalg.svd(own - c, full_matrices=False)
    try:
        true_area = polygon_area(convex_hull_2d(np.c_[(own - c) @ Vt[0], (own - c) @ Vt[1]]))
        hull = convex_hull_2d(cam_aligned[:, :2])
        if polygon_area(hull) >= MIN_LOOP_AREA_RATIO * true_area:
            return hull
    except ValueError:
        pass
    lo = full_aligned[:, :2].min(axis=0) - 1.0
    hi = full_aligned[:, :2].max(axis=0) + 1.0
    return np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])


def default_k(n_points: int) -> int:
    return max(100, int(round(0.005 * n_points)))


def select_human_head(
    full: PointCloud,
    poses,
    k: int | None = None,
    offset_head: float = 0.45,
) -> Selection:
    """Bust selection under a virtual plane fitted to the top of the head.

    The ``k`` points nearest the pose centroid are the head top; the plane
    fitted to them is oriented away from the cloud's centroid (upward). The
    prism base is the pose-loop hull, bounded below at ``offset_head`` under
    the virtual plane and unbounded above.
    """
    pts = full.points
    if len(pts) == 0:
        raise SelectionError("empty cloud")
    k = default_k(len(pts)) if k is None else int(k)
    if k < 3:
        raise ValueError("k must be at least 3")
    k = min(k, len(pts))
    cam = _pose_positions(poses)
    if len(cam) < 3:
        raise SelectionError("need at least 3 sensor poses to close a loop")
    centroid = cam.mean(axis=0)
    dist = np.linalg.norm(pts - centroid, axis=1)
    head_top = np.argsort(dist, kind="stable")[:k]
    plane = fit_plane_lstsq(pts[head_top])
    cloud_c = pts.mean(axis=0)
    if plane.signed_distance(cloud_c[None])[0] > 0:
        plane = plane.flipped()
    T = plane_align_transform(plane)
    full_aligned = T.apply(pts)
    cam_aligned = T.apply(cam)
    plane_z = -plane.d
    base = _loop_base(cam, cam_aligned, full_aligned)
    prism = Prism(base, plane_z - offset_head, np.inf, include_z_min=True)
    idx = np.flatnonzero(prism.contains(full_aligned))
    if len(idx) == 0:
        raise SelectionError("no points inside the head prism")
    return Selection(idx, full.subset(idx), T, prism, plane)
