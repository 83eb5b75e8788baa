"""Marching-cubes extraction of the TSDF zero level set."""
from __future__ import annotations

import numpy as np

from ._mc_tables import CORNERS, EDGES, TRI_TABLE
from .geometry import TriangleMesh
from .tsdf import TsdfVolume

_CORNERS = np.array(CORNERS, dtype=np.int64)
_TRI = np.full((256, 15), -1, dtype=np.int64)
for _case, _row in enumerate(TRI_TABLE):
    _TRI[_case, :len(_row)] = _row

# per local edge: offset of its lower corner and the axis it runs along
_EDGE_ORIGIN = np.array([np.minimum(_CORNERS[a], _CORNERS[b]) for a, b in EDGES])
_EDGE_AXIS = np.array([int(np.argmax(np.abs(_CORNERS[b] - _CORNERS[a]))) for a, b in EDGES])

# keeps vertices of edges meeting at an exactly-iso corner apart
_T_CLAMP = 1e-7


def marching_cubes_grid(values, observed, origin, spacing: float, iso: float = 0.0) -> TriangleMesh:
    """Triangulate the ``iso`` level set of a scalar grid.

    Only cubes whose eight corners are all ``observed`` are processed. A corner
    is inside when its value is below ``iso``; faces are wound so their normals
    point from the inside (low values) toward the outside. Vertices sit on
    grid edges and are shared by every face using that edge.
    """
    f = np.asarray(values, dtype=np.float64)
    nx, ny, nz = f.shape
    obs = np.asarray(observed, dtype=bool)
    inside = f < iso

    cube = (slice(0, nx - 1), slice(0, ny - 1), slice(0, nz - 1))
    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int64)
    ok = np.ones((nx - 1, ny - 1, nz - 1), dtype=bool)
    for c, (dx, dy, dz) in enumerate(CORNERS):
        sl = (slice(dx, nx - 1 + dx), slice(dy, ny - 1 + dy), slice(dz, nz - 1 + dz))
        case |= inside[sl].astype(np.int64) << c
        ok &= obs[sl]
    active = ok & (case != 0) & (case != 255)
    ci, cj, ck = np.nonzero(active)
    if len(ci) == 0:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    cases = case[ci, cj, ck]
    del case, ok, active, cube

    # global id of each of the 12 local edges of every active cube
    ei = ci[:, None] + _EDGE_ORIGIN[None, :, 0]
    ej = cj[:, None] + _EDGE_ORIGIN[None, :, 1]
    ek = ck[:, None] + _EDGE_ORIGIN[None, :, 2]
    gid = ((ei * ny + ej) * nz + ek) * 3 + _EDGE_AXIS[None, :]

    local = _TRI[cases].reshape(-1, 5, 3)
    has = local[:, :, 0] >= 0
    tri_edges = np.take_along_axis(gid, np.clip(local, 0, None).reshape(len(cases), 15), axis=1)
    tri_edges = tri_edges.reshape(-1, 5, 3)[has]

    edge_ids, faces = np.unique(tri_edges.ravel(), return_inverse=True)
    faces = faces.reshape(-1, 3)[:, ::-1].astype(np.int64)

    axis = edge_ids % 3
    lin = edge_ids // 3
    k0 = lin % nz
    j0 = (lin // nz) % ny
    i0 = lin // (ny * nz)
    step = np.eye(3, dtype=np.int64)[axis]
    f0 = f[i0, j0, k0]
    f1 = f[i0 + step[:, 0], j0 + step[:, 1], k0 + step[:, 2]]
    t = np.clip((iso - f0) / (f1 - f0), _T_CLAMP, 1.0 - _T_CLAMP)
    grid_pos = np.column_stack([i0, j0, k0]).astype(np.float64) + t[:, None] * step
    vertices = np.asarray(origin, dtype=np.float64) + spacing * grid_pos
    return TriangleMesh(vertices, faces)


def marching_cubes(volume: TsdfVolume, iso: float = 0.0) -> TriangleMesh:
    """Mesh of the volume's zero crossing, skipping cubes that touch unobserved voxels."""
    return marching_cubes_grid(volume.tsdf, volume.weight > 0, volume.origin, volume.voxel_size, iso)
