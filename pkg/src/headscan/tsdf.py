"""Voxelized truncated signed distance volume.

Values are stored normalized to [-1, 1] in units of the truncation distance,
positive in front of the surface (free space) and negative behind it. Frames
are fused with a weighted running average whose weight is capped at
``w_alpha``, which turns the average into a moving one.

Snapshot file layout (little-endian)::

    8 bytes    magic b"HSTSDF01"
    int32[3]   resolution (nx, ny, nz)
    float64    voxel_size
    float64[3] origin (center of voxel 0, 0, 0)
    float64    trunc_dist
    float64    w_alpha
    float32    tsdf[nx * ny * nz], C order (x slowest)
    float32    weight[nx * ny * nz]
"""
from __future__ import annotations

import struct

import numba
import numpy as np

from .geometry import CameraIntrinsics, DepthFrame, PointCloud, RigidTransform


def tsdf_update(D, W, d, w, w_alpha=np.inf):
    """One running-average step; works on scalars and arrays alike.

    ``D' = (W D + w d) / (W + w)`` and ``W' = min(W + w, w_alpha)``.
    """
    D_new = (W * D + w * d) / (W + w)
    W_new = np.minimum(W + w, w_alpha)
    return D_new, W_new


class TsdfVolume:
    """Dense TSDF grid. Voxel ``(i, j, k)`` is centered at ``origin + voxel_size * (i, j, k)``."""

    def __init__(self, resolution, voxel_size: float, origin, trunc_dist: float | None = None, w_alpha: float = 64.0):
        res = tuple(int(r) for r in np.broadcast_to(resolution, (3,)))
        if min(res) < 2 or voxel_size <= 0:
            raise ValueError("volume needs at least 2 voxels per axis and a positive voxel size")
        self.resolution = res
        self.voxel_size = float(voxel_size)
        self.origin = np.asarray(origin, dtype=np.float64).reshape(3)
        self.trunc_dist = float(4.0 * voxel_size if trunc_dist is None else trunc_dist)
        self.w_alpha = float(w_alpha)
        self.tsdf = np.ones(res, dtype=np.float64)
        self.weight = np.zeros(res, dtype=np.float64)

    @classmethod
    def around(cls, center, extent: float, resolution: int, trunc_multiple: float = 4.0, w_alpha: float = 64.0):
        """Cubic volume of edge ``extent`` centered at ``center``."""
        voxel = extent / resolution
        origin = np.asarray(center, dtype=np.float64) - extent / 2.0 + voxel / 2.0
        return cls(resolution, voxel, origin, trunc_multiple * voxel, w_alpha)

    @classmethod
    def from_sdf(cls, sdf, resolution, voxel_size, origin, trunc_dist=None, w_alpha=64.0, weight=1.0):
        """Volume filled from an analytic signed distance function of (N, 3) points."""
        vol = cls(resolution, voxel_size, origin, trunc_dist, w_alpha)
        pts = vol.voxel_centers().reshape(-1, 3)
        vol.tsdf = np.clip(np.asarray(sdf(pts), dtype=np.float64) / vol.trunc_dist, -1.0, 1.0).reshape(vol.resolution)
        vol.weight = np.full(vol.resolution, float(weight))
        return vol

    def copy(self) -> "TsdfVolume":
        out = TsdfVolume(self.resolution, self.voxel_size, self.origin, self.trunc_dist, self.w_alpha)
        out.tsdf = self.tsdf.copy()
        out.weight = self.weight.copy()
        return out

    def voxel_centers(self) -> np.ndarray:
        idx = np.stack(np.meshgrid(*[np.arange(n) for n in self.resolution], indexing="ij"), axis=-1)
        return self.origin + self.voxel_size * idx

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        hi = self.origin + self.voxel_size * (np.asarray(self.resolution) - 1)
        return self.origin.copy(), hi

    def integrate(self, frame: DepthFrame, pose: RigidTransform, K: CameraIntrinsics, w_frame: float = 1.0,
                  max_jump: float = 0.05) -> None:
        """Fuse one depth frame seen from camera-to-world ``pose``.

        Every voxel whose center projects onto the image gets the projective
        signed distance ``depth - voxel_z``, clipped to ``trunc_dist`` and
        normalized. Depth is sampled bilinearly where the four surrounding
        pixels are valid and within ``max_jump`` of each other, from the
        nearest pixel otherwise (skipped if that one is invalid). Bilinear
        sampling keeps surfaces seen at grazing angles smooth, where adjacent
        pixels can differ by more than the truncation band. Voxels more than
        ``trunc_dist`` behind the surface are left alone.
        """
        frame.check_intrinsics(K)
        if not frame.valid.any():
            return
        world_to_cam = pose.inverse()
        _integrate(
            self.tsdf, self.weight, self.origin, self.voxel_size,
            np.ascontiguousarray(world_to_cam.rotation), np.ascontiguousarray(world_to_cam.translation),
            frame.depth, frame.valid, K.fx, K.fy, K.cx, K.cy,
            self.trunc_dist, float(w_frame), self.w_alpha, float(max_jump),
        )

    def raycast(self, pose: RigidTransform, K: CameraIntrinsics, step: float | None = None):
        """Predicted surface seen from ``pose``; see :func:`raycast`."""
        return raycast(self, pose, K, step)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(b"HSTSDF01")
            fh.write(struct.pack("<3i", *self.resolution))
            fh.write(struct.pack("<d", self.voxel_size))
            fh.write(struct.pack("<3d", *self.origin))
            fh.write(struct.pack("<2d", self.trunc_dist, self.w_alpha))
            fh.write(self.tsdf.astype("<f4").tobytes())
            fh.write(self.weight.astype("<f4").tobytes())

    @classmethod
    def load(cls, path) -> "TsdfVolume":
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:8] != b"HSTSDF01":
            raise ValueError(f"{path}: not a TSDF snapshot (bad magic at byte 0)")
        res = struct.unpack_from("<3i", data, 8)
        (voxel,) = struct.unpack_from("<d", data, 20)
        origin = struct.unpack_from("<3d", data, 28)
        trunc, w_alpha = struct.unpack_from("<2d", data, 52)
        n = int(np.prod(res))
        need = 68 + 8 * n
        if len(data) != need:
            raise ValueError(f"{path}: expected {need} bytes for a {res} volume, found {len(data)}")
        vol = cls(res, voxel, origin, trunc, w_alpha)
        vol.tsdf = np.frombuffer(data, "<f4", n, 68).astype(np.float64).reshape(res)
        vol.weight = np.frombuffer(data, "<f4", n, 68 + 4 * n).astype(np.float64).reshape(res)
        return vol


@numba.njit(cache=True)
def _bilinear_cells(depth, valid, max_jump):
    """Pixel cells (v0, u0) whose four corners are valid and span at most ``max_jump``;
    depth inside them is interpolated bilinearly."""
    h, w = depth.shape
    ok = np.zeros((h, w), dtype=np.bool_)
    for v in range(h - 1):
        for u in range(w - 1):
            if valid[v, u] and valid[v, u + 1] and valid[v + 1, u] and valid[v + 1, u + 1]:
                d00 = depth[v, u]
                d01 = depth[v, u + 1]
                d10 = depth[v + 1, u]
                d11 = depth[v + 1, u + 1]
                lo = min(min(d00, d01), min(d10, d11))
                hi = max(max(d00, d01), max(d10, d11))
                ok[v, u] = hi - lo <= max_jump
    return ok


@numba.njit(cache=True)
def _integrate(tsdf, weight, origin, voxel, R, t, depth, valid, fx, fy, cx, cy, trunc, w, w_alpha, max_jump):
    nx, ny, nz = tsdf.shape
    h, wd = depth.shape
    cells = _bilinear_cells(depth, valid, max_jump)
    for i in range(nx):
        px = origin[0] + voxel * i
        for j in range(ny):
            py = origin[1] + voxel * j
            for k in range(nz):
                pz = origin[2] + voxel * k
                x = R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz + t[0]
                y = R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz + t[1]
                z = R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz + t[2]
                if z <= 1e-9:
                    continue
                uf = fx * x / z + cx
                vf = fy * y / z + cy
                if uf < -0.5 or vf < -0.5 or uf >= wd - 0.5 or vf >= h - 0.5:
                    continue
                # depth lookup: bilinear inside a flagged cell, nearest pixel otherwise
                u0 = int(np.floor(uf))
                v0 = int(np.floor(vf))
                if u0 >= 0 and v0 >= 0 and u0 + 1 < wd and v0 + 1 < h and cells[v0, u0]:
                    a = uf - u0
                    b = vf - v0
                    dm = ((1 - b) * ((1 - a) * depth[v0, u0] + a * depth[v0, u0 + 1])
                          + b * ((1 - a) * depth[v0 + 1, u0] + a * depth[v0 + 1, u0 + 1]))
                else:
                    u = int(np.floor(uf + 0.5))
                    v = int(np.floor(vf + 0.5))
                    if u >= wd or v >= h or not valid[v, u]:
                        continue
                    dm = depth[v, u]
                sdf = dm - z
                if sdf < -trunc:
                    continue
                d = min(1.0, sdf / trunc)
                W = weight[i, j, k]
                tsdf[i, j, k] = (W * tsdf[i, j, k] + w * d) / (W + w)
                weight[i, j, k] = min(W + w, w_alpha)


@numba.njit(cache=True, inline="always")
def _sample(tsdf, weight, gx, gy, gz):
    """Trilinear tsdf at grid coordinates; NaN unless all 8 corners are observed."""
    nx, ny, nz = tsdf.shape
    i = int(np.floor(gx))
    j = int(np.floor(gy))
    k = int(np.floor(gz))
    if i < 0 or j < 0 or k < 0 or i >= nx - 1 or j >= ny - 1 or k >= nz - 1:
        return np.nan
    fx = gx - i
    fy = gy - j
    fz = gz - k
    acc = 0.0
    for di in range(2):
        wx = fx if di else 1.0 - fx
        for dj in range(2):
            wy = fy if dj else 1.0 - fy
            for dk in range(2):
                if weight[i + di, j + dj, k + dk] <= 0.0:
                    return np.nan
                wz = fz if dk else 1.0 - fz
                acc += wx * wy * wz * tsdf[i + di, j + dj, k + dk]
    return acc


@numba.njit(cache=True)
def _cell_gradient(tsdf, weight, gx, gy, gz):
    """Gradient of the trilinear interpolant inside the cell holding (gx, gy, gz)."""
    nx, ny, nz = tsdf.shape
    i = min(max(int(np.floor(gx)), 0), nx - 2)
    j = min(max(int(np.floor(gy)), 0), ny - 2)
    k = min(max(int(np.floor(gz)), 0), nz - 2)
    fx = min(max(gx - i, 0.0), 1.0)
    fy = min(max(gy - j, 0.0), 1.0)
    fz = min(max(gz - k, 0.0), 1.0)
    g = np.zeros(3)
    for di in range(2):
        for dj in range(2):
            for dk in range(2):
                if weight[i + di, j + dj, k + dk] <= 0.0:
                    return np.nan, np.nan, np.nan
                f = tsdf[i + di, j + dj, k + dk]
                wx = fx if di else 1.0 - fx
                wy = fy if dj else 1.0 - fy
                wz = fz if dk else 1.0 - fz
                g[0] += (1.0 if di else -1.0) * wy * wz * f
                g[1] += (1.0 if dj else -1.0) * wx * wz * f
                g[2] += (1.0 if dk else -1.0) * wx * wy * f
    return g[0], g[1], g[2]


@numba.njit(cache=True)
def _gradient(tsdf, weight, hx, hy, hz):
    """Central difference over one voxel; the containing cell's gradient where
    the stencil reaches unobserved voxels (thin bands at grazing incidence)."""
    g0 = _sample(tsdf, weight, hx + 0.5, hy, hz) - _sample(tsdf, weight, hx - 0.5, hy, hz)
    g1 = _sample(tsdf, weight, hx, hy + 0.5, hz) - _sample(tsdf, weight, hx, hy - 0.5, hz)
    g2 = _sample(tsdf, weight, hx, hy, hz + 0.5) - _sample(tsdf, weight, hx, hy, hz - 0.5)
    if np.isnan(g0) or np.isnan(g1) or np.isnan(g2):
        return _cell_gradient(tsdf, weight, hx, hy, hz)
    return g0, g1, g2


@numba.njit(cache=True)
def _raycast(tsdf, weight, origin, voxel, R, t, fx, fy, cx, cy, width, height, step, trunc):
    nx, ny, nz = tsdf.shape
    pts = np.zeros((height, width, 3))
    nrm = np.zeros((height, width, 3))
    hit = np.zeros((height, width), dtype=np.bool_)
    lo = origin
    hi = np.empty(3)
    hi[0] = origin[0] + voxel * (nx - 1)
    hi[1] = origin[1] + voxel * (ny - 1)
    hi[2] = origin[2] + voxel * (nz - 1)
    d = np.empty(3)
    # coarser steps through free and unobserved space; a surface's negative
    # band is at least a voxel deep, so a one-voxel step cannot jump it
    far = max(step, voxel)
    for v in range(height):
        for u in range(width):
            rx = (u - cx) / fx
            ry = (v - cy) / fy
            for a in range(3):
                d[a] = R[a, 0] * rx + R[a, 1] * ry + R[a, 2]
            norm = np.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
            for a in range(3):
                d[a] /= norm
            # slab intersection with the grid's bounding box
            t0 = 0.0
            t1 = np.inf
            inside = True
            for a in range(3):
                if abs(d[a]) < 1e-15:
                    if t[a] < lo[a] or t[a] > hi[a]:
                        inside = False
                else:
                    ta = (lo[a] - t[a]) / d[a]
                    tb = (hi[a] - t[a]) / d[a]
                    if ta > tb:
                        ta, tb = tb, ta
                    t0 = max(t0, ta)
                    t1 = min(t1, tb)
            if not inside or t0 >= t1:
                continue
            s = t0
            prev = np.nan
            prev_s = s
            while s <= t1:
                gx = (t[0] + s * d[0] - origin[0]) / voxel
                gy = (t[1] + s * d[1] - origin[1]) / voxel
                gz = (t[2] + s * d[2] - origin[2]) / voxel
                f = _sample(tsdf, weight, gx, gy, gz)
                if not np.isnan(f):
                    if not np.isnan(prev):
                        if prev > 0.0 and f < 0.0:
                            sh = prev_s + (s - prev_s) * prev / (prev - f)
                            qx = t[0] + sh * d[0]
                            qy = t[1] + sh * d[1]
                            qz = t[2] + sh * d[2]
                            hx = (qx - origin[0]) / voxel
                            hy = (qy - origin[1]) / voxel
                            hz = (qz - origin[2]) / voxel
                            g0, g1, g2 = _gradient(tsdf, weight, hx, hy, hz)
                            gn = np.sqrt(g0 * g0 + g1 * g1 + g2 * g2)
                            # hits on the grid's outer voxel layer get one-sided, skewed normals
                            interior = (1.0 <= hx <= nx - 2.0) and (1.0 <= hy <= ny - 2.0) and (1.0 <= hz <= nz - 2.0)
                            if interior and gn > 0.0 and not np.isnan(gn):
                                pts[v, u, 0] = qx
                                pts[v, u, 1] = qy
                                pts[v, u, 2] = qz
                                nrm[v, u, 0] = g0 / gn
                                nrm[v, u, 1] = g1 / gn
                                nrm[v, u, 2] = g2 / gn
                                hit[v, u] = True
                            break
                        if prev < 0.0 and f > 0.0:
                            break  # reached the back of a surface
                    prev = f
                    prev_s = s
                    s += far if f >= 0.999 else step
                else:
                    prev = np.nan
                    s += far
    return pts, nrm, hit


def raycast(volume: TsdfVolume, pose: RigidTransform, K: CameraIntrinsics, step: float | None = None,
            return_maps: bool = False):
    """March one ray per pixel through the volume and stop at the first
    positive-to-negative crossing.

    The hit is placed by linear interpolation between the bracketing samples;
    its normal is the normalized central-difference gradient of the field.
    Samples touching unobserved voxels are skipped. Returns a world-frame
    :class:`PointCloud` with normals, or ``(points, normals, hit_mask)`` maps
    when ``return_maps`` is set.
    """
    step = volume.voxel_size / 2.0 if step is None else float(step)
    pts, nrm, hit = _raycast(
        volume.tsdf, volume.weight, volume.origin, volume.voxel_size,
        np.ascontiguousarray(pose.rotation), np.ascontiguousarray(pose.translation),
        K.fx, K.fy, K.cx, K.cy, K.width, K.height, step, volume.trunc_dist,
    )
    if return_maps:
        return pts, nrm, hit
    return PointCloud(pts[hit], nrm[hit])
