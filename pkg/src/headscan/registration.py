"""Frame-to-model camera tracking.

Depth frames are bilateral-filtered, back-projected, and registered to the
ray-cast model surface with point-to-plane ICP. The ICP pose is then blended
with the motion-sensor pose, giving ICP the larger share (0.8 vs 0.2).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .geometry import (
    CameraIntrinsics,
    DepthFrame,
    PointCloud,
    RigidTransform,
    backproject_map,
    normal_map,
    orthonormalize,
    rotvec_to_matrix,
)

W_ICP = 0.8
W_SENSOR = 0.2


def bilateral_filter(
    frame: DepthFrame,
    sigma_space: float,
    sigma_range: float,
    radius: int | None = None,
    min_fill_neighbors: int = 3,
) -> DepthFrame:
    """Edge-preserving smoothing of a depth frame.

    Valid pixels become the spatial x range weighted mean of the valid pixels
    in a ``(2 radius + 1)^2`` window (radius defaults to ``ceil(2 sigma_space)``).
    Invalid pixels with at least ``min_fill_neighbors`` valid window neighbors
    are filled with the spatially weighted mean of those neighbors.
    """
    if not (sigma_space > 0 and sigma_range > 0):
        raise ValueError("filter sigmas must be positive")
    r = int(np.ceil(2.0 * sigma_space)) if radius is None else int(radius)
    d = frame.depth
    v = frame.valid
    h, w = d.shape
    dp = np.pad(d, r)
    vp = np.pad(v, r)
    num = np.zeros((h, w))
    den = np.zeros((h, w))
    fill_num = np.zeros((h, w))
    fill_den = np.zeros((h, w))
    count = np.zeros((h, w), dtype=np.int64)
    inv_s = -0.5 / sigma_space**2
    inv_r = -0.5 / sigma_range**2
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            nd = dp[r + dy:r + dy + h, r + dx:r + dx + w]
            nv = vp[r + dy:r + dy + h, r + dx:r + dx + w]
            ws = np.exp((dx * dx + dy * dy) * inv_s)
            wr = np.exp((nd - d) ** 2 * inv_r)
            wgt = np.where(nv, ws * wr, 0.0)
            num += wgt * nd
            den += wgt
            if dx or dy:
                fill_num += np.where(nv, ws * nd, 0.0)
                fill_den += np.where(nv, ws, 0.0)
                count += nv
    out = d.copy()
    out[v] = num[v] / den[v]
    fill = ~v & (count >= min_fill_neighbors)
    out[fill] = fill_num[fill] / fill_den[fill]
    return DepthFrame(out, v | fill)


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 30
    max_correspondence_distance: float = 0.10
    max_normal_angle: float = 30.0  # degrees
    convergence_threshold: float = 1e-6
    degeneracy_threshold: float = 1e6
    min_correspondences: int = 6
    max_backtracks: int = 6
    residual_gate: float = 3.0
    """Reject pairs whose plane residual exceeds this many robust sigmas (0 disables)."""
    residual_floor: float = 0.002
    """Residuals below this (m) are never rejected by the gate."""

    def __post_init__(self):
        if self.max_iterations <= 0 or self.max_correspondence_distance <= 0 or self.convergence_threshold <= 0:
            raise ValueError("ICP parameters must be positive")
        if not 0 < self.max_normal_angle <= 90:
            raise ValueError("max_normal_angle must lie in (0, 90] degrees")


@dataclass(frozen=True, eq=False)
class IcpResult:
    transform: RigidTransform
    rms_error: float
    inlier_fraction: float
    converged: bool
    degenerate: bool
    iterations: int = 0
    condition_number: float = float("nan")
    history: tuple = field(default_factory=tuple)
    """Objective value (mean squared point-to-plane residual) of each accepted iterate."""


def point_to_plane_system(src, dst, normals, center=None, scale: float = 1.0):
    """Normal equations of the linearized point-to-plane problem.

    Unknowns are ``(scale * omega, t)`` for the motion
    ``x -> x + omega x (x - center) + t``. Returns ``(AtA, Atb)``.
    """
    c = np.zeros(3) if center is None else center
    p = src - c
    J = np.hstack([np.cross(p, normals) / scale, normals])
    b = np.einsum("ij,ij->i", normals, dst - src)
    return J.T @ J, J.T @ b


def point_to_plane_step(src, dst, normals) -> tuple[np.ndarray, np.ndarray]:
    """Small-angle least-squares increment ``(omega, t)`` about the origin.

    Minimizes ``sum_i (n_i . (p_i + omega x p_i + t - q_i))^2``. Internally the
    problem is centered and scaled for conditioning; the answer is mapped back.
    """
    omega, t_c, _ = _solve_centered(np.asarray(src, float), np.asarray(dst, float), np.asarray(normals, float))[:3]
    c = np.asarray(src, float).mean(axis=0)
    return omega, t_c - np.cross(omega, c)


def _solve_centered(src, dst, normals):
    c = src.mean(axis=0)
    s = float(np.sqrt(np.mean(np.sum((src - c) ** 2, axis=1))))
    s = s if s > 0 else 1.0
    AtA, Atb = point_to_plane_system(src, dst, normals, c, s)
    ev = np.linalg.eigvalsh(AtA)
    cond = float(ev[-1] / ev[0]) if ev[0] > ev[-1] * 1e-300 and ev[0] > 0 else float("inf")
    x = np.linalg.lstsq(AtA, Atb, rcond=None)[0]
    return x[:3] / s, x[3:], c, cond


class _Matcher:
    def __init__(self, source: PointCloud, target: PointCloud, params: IcpParams):
        self.src = source.points
        self.src_n = source.normals
        self.tgt = target.points
        self.tgt_n = target.normals
        self.tree = cKDTree(target.points)
        self.params = params
        self.cos_max = np.cos(np.radians(params.max_normal_angle))

    def match(self, T: RigidTransform):
        p = T.apply(self.src)
        dist, idx = self.tree.query(p, distance_upper_bound=self.params.max_correspondence_distance)
        ok = np.isfinite(dist)
        idx = np.where(ok, idx, 0)
        q = self.tgt[idx]
        n = self.tgt_n[idx]
        if self.src_n is not None:
            ok &= np.einsum("ij,ij->i", T.apply_vectors(self.src_n), n) >= self.cos_max
        p, q, n = p[ok], q[ok], n[ok]
        r = np.einsum("ij,ij->i", n, p - q)
        if self.params.residual_gate > 0 and len(r):
            sigma = 1.4826 * float(np.median(np.abs(r)))
            keep = np.abs(r) <= max(self.params.residual_gate * sigma, self.params.residual_floor)
            p, q, n, r = p[keep], q[keep], n[keep], r[keep]
        obj = float(np.mean(r * r)) if len(r) else float("inf")
        return p, q, n, obj, len(r)


def _apply_increment(T: RigidTransform, omega, t_c, c, alpha: float) -> RigidTransform:
    R_inc = rotvec_to_matrix(alpha * omega)
    t_inc = c - R_inc @ c + alpha * t_c
    R = orthonormalize(R_inc @ T.rotation)
    return RigidTransform(R, R_inc @ T.translation + t_inc)


def icp_point_to_plane(
    source: PointCloud,
    target: PointCloud,
    init: RigidTransform | None = None,
    params: IcpParams | None = None,
) -> IcpResult:
    """Point-to-plane ICP: find T minimizing ``sum (n_t . (T p_s - p_t))^2``.

    Correspondences are nearest neighbors, rejected beyond
    ``max_correspondence_distance`` or, when the source carries normals, beyond
    ``max_normal_angle``. A step that would raise the objective is halved until
    it does not (up to ``max_backtracks`` times), so accepted iterates never
    increase the objective. ``degenerate`` is set when the scaled 6x6 system's
    condition number exceeds ``degeneracy_threshold``.
    """
    params = params or IcpParams()
    T = init or RigidTransform.identity()
    if len(source) == 0 or len(target) == 0:
        raise ValueError("ICP needs non-empty source and target clouds")
    if not target.has_normals:
        raise ValueError("point-to-plane ICP needs target normals")
    m = _Matcher(source, target, params)

    p, q, n, obj, count = m.match(T)
    if count < params.min_correspondences:
        return IcpResult(T, float("inf"), count / len(source), False, False, 0)
    history = [obj]
    converged = False
    cond = float("nan")
    it = 0
    for it in range(1, params.max_iterations + 1):
        omega, t_c, c, cond = _solve_centered(p, q, n)
        if np.linalg.norm(omega) < 1e-14 and np.linalg.norm(t_c) < 1e-14:
            converged = True
            break
        alpha = 1.0
        for _ in range(params.max_backtracks + 1):
            T_new = _apply_increment(T, omega, t_c, c, alpha)
            p2, q2, n2, obj2, count2 = m.match(T_new)
            if count2 >= params.min_correspondences and obj2 <= obj:
                break
            alpha *= 0.5
        else:
            # no step lowers the objective: local minimum
            converged = True
            break
        rel = (obj - obj2) / obj if obj > 0 else 0.0
        T, p, q, n, obj, count = T_new, p2, q2, n2, obj2, count2
        history.append(obj)
        if rel < params.convergence_threshold or obj < 1e-24:
            converged = True
            break
    return IcpResult(
        transform=T,
        rms_error=float(np.sqrt(obj)),
        inlier_fraction=count / len(source),
        converged=converged,
        degenerate=bool(not cond <= params.degeneracy_threshold),
        iterations=it,
        condition_number=cond,
        history=tuple(history),
    )


def fuse_pose(icp: RigidTransform, sensor: RigidTransform, w_icp: float = W_ICP, w_sensor: float = W_SENSOR) -> RigidTransform:
    """Weighted blend of the ICP pose and the motion-sensor pose.

    Translations blend linearly; rotations through the normalized weighted sum
    of hemisphere-aligned unit quaternions.
    """
    if w_icp < 0 or w_sensor < 0 or abs(w_icp + w_sensor - 1.0) > 1e-9:
        raise ValueError(f"fusion weights must be non-negative and sum to 1, got {w_icp} + {w_sensor}")
    if w_sensor == 0:
        return icp
    if w_icp == 0:
        return sensor
    qa = Rotation.from_matrix(icp.rotation).as_quat()
    qb = Rotation.from_matrix(sensor.rotation).as_quat()
    if np.dot(qa, qb) < 0:
        qb = -qb
    q = w_icp * qa + w_sensor * qb
    R = orthonormalize(Rotation.from_quat(q / np.linalg.norm(q)).as_matrix())
    return RigidTransform(R, w_icp * icp.translation + w_sensor * sensor.translation)


@dataclass(frozen=True)
class FilterParams:
    sigma_space: float = 1.0
    sigma_range: float = 0.01
    normal_window: int = 1
    subsample: int = 2


def track_frame(
    frame: DepthFrame,
    model_prediction: PointCloud | None,
    sensor_pose: RigidTransform,
    prev_pose: RigidTransform,
    K: CameraIntrinsics,
    params: IcpParams | None = None,
    w_icp: float = W_ICP,
    w_sensor: float = W_SENSOR,
    filtering: FilterParams | None = None,
) -> IcpResult:
    """Estimate the camera-to-world pose of ``frame`` against the model.

    ICP starts from ``prev_pose``. The source cloud is the measured points of
    the frame; the bilateral-filtered frame supplies their normals, which are
    only used to reject correspondences. Filtered depths are not used as
    positions because the filter shifts points near silhouettes and on curved
    surfaces, and that shift biases the weakly constrained directions of the
    fit. Filled-in pixels are likewise left out.

    Without a model prediction (first frame) the sensor pose is returned. If
    ICP loses track or is degenerate the sensor pose is returned and
    ``converged`` is False.
    """
    filtering = filtering or FilterParams()
    if model_prediction is None or len(model_prediction) == 0:
        return IcpResult(sensor_pose, 0.0, 0.0, False, False, 0)
    frame.check_intrinsics(K)
    smoothed = bilateral_filter(frame, filtering.sigma_space, filtering.sigma_range)
    smoothed = DepthFrame(np.where(frame.valid, smoothed.depth, 0.0), frame.valid)
    _, normals, ok = normal_map(smoothed, K, filtering.normal_window)
    pts = backproject_map(frame, K)
    s = filtering.subsample
    pts, normals, ok = pts[::s, ::s], normals[::s, ::s], ok[::s, ::s]
    if not ok.any():
        return IcpResult(sensor_pose, float("inf"), 0.0, False, False, 0)
    source = PointCloud(pts[ok], normals[ok])
    icp = icp_point_to_plane(source, model_prediction, prev_pose, params)
    if not icp.converged or icp.degenerate:
        return IcpResult(sensor_pose, icp.rms_error, icp.inlier_fraction, False, icp.degenerate,
                         icp.iterations, icp.condition_number, icp.history)
    fused = fuse_pose(icp.transform, sensor_pose, w_icp, w_sensor)
    return IcpResult(fused, icp.rms_error, icp.inlier_fraction, True, False,
                     icp.iterations, icp.condition_number, icp.history)
