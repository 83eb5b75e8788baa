"""Procedural ground-truth scenes for the synthetic scanner."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import RigidTransform, TriangleMesh


def uv_sphere_directions(n_lat: int, n_lon: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit directions and outward-wound faces of a closed UV sphere."""
    theta = np.linspace(0.0, np.pi, n_lat + 1)[1:-1]
    phi = np.arange(n_lon) * (2.0 * np.pi / n_lon)
    st, ct = np.sin(theta)[:, None], np.cos(theta)[:, None]
    ring = np.stack(
        [st * np.cos(phi)[None, :], st * np.sin(phi)[None, :], np.broadcast_to(ct, (len(theta), n_lon))],
        axis=-1,
    ).reshape(-1, 3)
    dirs = np.concatenate([[[0.0, 0.0, 1.0]], ring, [[0.0, 0.0, -1.0]]])
    top, bottom = 0, len(dirs) - 1

    def vid(i, j):
        return 1 + i * n_lon + (j % n_lon)

    faces = []
    for j in range(n_lon):
        faces.append((top, vid(0, j), vid(0, j + 1)))
    for i in range(n_lat - 2):
        for j in range(n_lon):
            a, b = vid(i, j), vid(i, j + 1)
            c, d = vid(i + 1, j), vid(i + 1, j + 1)
            faces.append((a, c, d))
            faces.append((a, d, b))
    for j in range(n_lon):
        faces.append((bottom, vid(n_lat - 2, j + 1), vid(n_lat - 2, j)))
    return dirs, np.asarray(faces, dtype=np.int64)


def star_mesh(center, radius_fn, n_lat: int = 64, n_lon: int = 128) -> TriangleMesh:
    """Closed surface ``center + r(u) u`` over unit directions ``u``."""
    dirs, faces = uv_sphere_directions(n_lat, n_lon)
    r = radius_fn(dirs)
    return TriangleMesh(np.asarray(center, dtype=np.float64) + dirs * r[:, None], faces)


def sphere_mesh(center, radius: float, n_lat: int = 32, n_lon: int = 64) -> TriangleMesh:
    return star_mesh(center, lambda d: np.full(len(d), float(radius)), n_lat, n_lon)


def box_mesh(lo, hi) -> TriangleMesh:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    c = np.array([[lo[0], lo[1], lo[2]], [hi[0], lo[1], lo[2]], [hi[0], hi[1], lo[2]], [lo[0], hi[1], lo[2]],
                  [lo[0], lo[1], hi[2]], [hi[0], lo[1], hi[2]], [hi[0], hi[1], hi[2]], [lo[0], hi[1], hi[2]]])
    f = [(0, 2, 1), (0, 3, 2), (4, 5, 6), (4, 6, 7), (0, 1, 5), (0, 5, 4),
         (1, 2, 6), (1, 6, 5), (2, 3, 7), (2, 7, 6), (3, 0, 4), (3, 4, 7)]
    return TriangleMesh(c, np.asarray(f))


def quad_mesh(center, half_x: float, half_y: float, n: int = 1) -> TriangleMesh:
    """Horizontal square patch at ``center``, normal +z, split into ``n x n`` cells."""
    cx, cy, cz = center
    xs = np.linspace(cx - half_x, cx + half_x, n + 1)
    ys = np.linspace(cy - half_y, cy + half_y, n + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel(), np.full(X.size, float(cz))])
    faces = []
    for i in range(n):
        for j in range(n):
            a = i * (n + 1) + j
            b, c, d = a + (n + 1), a + (n + 1) + 1, a + 1
            faces += [(a, b, c), (a, c, d)]
    return TriangleMesh(verts, np.asarray(faces))


def cylinder_mesh(center_bottom, radius: float, height: float, n: int = 64) -> TriangleMesh:
    """Closed vertical cylinder with capped ends."""
    x0, y0, z0 = center_bottom
    a = np.arange(n) * (2.0 * np.pi / n)
    ring = np.column_stack([x0 + radius * np.cos(a), y0 + radius * np.sin(a)])
    verts = np.concatenate([
        np.column_stack([ring, np.full(n, z0)]),
        np.column_stack([ring, np.full(n, z0 + height)]),
        [[x0, y0, z0], [x0, y0, z0 + height]],
    ])
    bc, tc = 2 * n, 2 * n + 1
    faces = []
    for j in range(n):
        k = (j + 1) % n
        faces += [(j, k, n + k), (j, n + k, n + j), (bc, k, j), (tc, n + j, n + k)]
    return TriangleMesh(verts, np.asarray(faces))


# Head proportions, meters. The head is the union of an ellipsoid skull with
# nose and ear bumps and a neck cylinder standing on z = 0.
HEAD_CENTER_Z = 0.115
HEAD_SEMI_AXES = (0.075, 0.095, 0.100)
NECK_RADIUS = 0.045


def _gaussian_bump(dirs, toward, amplitude, width):
    toward = np.asarray(toward, dtype=np.float64)
    toward = toward / np.linalg.norm(toward)
    ang = np.arccos(np.clip(dirs @ toward, -1.0, 1.0))
    return amplitude * np.exp(-0.5 * (ang / width) ** 2)


def head_radius(dirs: np.ndarray) -> np.ndarray:
    a, b, c = HEAD_SEMI_AXES
    ux, uy, uz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    r = 1.0 / np.sqrt((ux / a) ** 2 + (uy / b) ** 2 + (uz / c) ** 2)
    r = r + _gaussian_bump(dirs, (0.0, 1.0, -0.15), 0.022, 0.20)          # nose
    r = r + _gaussian_bump(dirs, (0.0, 0.95, -0.55), 0.010, 0.25)         # chin
    r = r + _gaussian_bump(dirs, (1.0, 0.0, 0.0), 0.010, 0.18)            # ears
    r = r + _gaussian_bump(dirs, (-1.0, 0.0, 0.0), 0.010, 0.18)
    rho = np.hypot(ux, uy)
    down = uz < 0
    with np.errstate(divide="ignore", invalid="ignore"):
        to_side = np.where(rho > 0, NECK_RADIUS / rho, np.inf)
        to_floor = np.where(down, HEAD_CENTER_Z / -uz, np.inf)
    neck = np.where(down, np.minimum(to_side, to_floor), 0.0)
    return np.maximum(r, neck)


def head_mesh(n_lat: int = 90, n_lon: int = 180) -> TriangleMesh:
    """Closed head-and-neck surface, about 21.5 cm tall, flat base on z = 0."""
    m = star_mesh((0.0, 0.0, HEAD_CENTER_Z), head_radius, n_lat, n_lon)
    v = m.vertices.copy()
    v[np.abs(v[:, 2]) < 1e-12, 2] = 0.0
    return TriangleMesh(v, m.faces)


def drop_base(mesh: TriangleMesh, z: float = 0.0, tol: float = 1e-6) -> TriangleMesh:
    """Remove the faces lying entirely on the plane ``z`` (the unobservable base)."""
    on_base = np.abs(mesh.vertices[:, 2] - z) <= tol
    keep_face = ~on_base[mesh.faces].all(axis=1)
    faces = mesh.faces[keep_face]
    used = np.zeros(len(mesh.vertices), dtype=bool)
    used[faces.ravel()] = True
    remap = -np.ones(len(mesh.vertices), dtype=np.int64)
    remap[used] = np.arange(used.sum())
    return TriangleMesh(mesh.vertices[used], remap[faces])


@dataclass(frozen=True, eq=False)
class Scene:
    """What the scanner sees, and what the reconstruction is judged against."""

    mesh: TriangleMesh
    reference: TriangleMesh
    center: np.ndarray
    mode: str


def head_on_table(table_half: float = 0.6) -> Scene:
    head = head_mesh()
    table = quad_mesh((0.0, 0.0, 0.0), table_half, table_half, n=4)
    return Scene(
        mesh=TriangleMesh.concatenate([head, table]),
        reference=drop_base(head),
        center=np.array([0.0, 0.0, HEAD_CENTER_Z]),
        mode="table",
    )


def tube_mesh(center_bottom, radius: float, height: float, n: int = 64, n_z: int = 1) -> TriangleMesh:
    """Open vertical cylinder wall (no caps)."""
    x0, y0, z0 = center_bottom
    a = np.arange(n) * (2.0 * np.pi / n)
    zs = z0 + np.linspace(0.0, height, n_z + 1)
    verts = np.array([(x0 + radius * np.cos(t), y0 + radius * np.sin(t), z) for z in zs for t in a])
    faces = []
    for r in range(n_z):
        for j in range(n):
            k = (j + 1) % n
            b, t = r * n, (r + 1) * n
            faces += [(b + j, b + k, t + k), (b + j, t + k, t + j)]
    return TriangleMesh(verts, np.asarray(faces))


def annulus_mesh(center, r_in: float, r_out: float, n: int = 64) -> TriangleMesh:
    """Flat horizontal ring facing +z."""
    x0, y0, z0 = center
    a = np.arange(n) * (2.0 * np.pi / n)
    ring = lambda r: np.column_stack([x0 + r * np.cos(a), y0 + r * np.sin(a), np.full(n, z0)])
    verts = np.concatenate([ring(r_in), ring(r_out)])
    faces = []
    for j in range(n):
        k = (j + 1) % n
        faces += [(j, n + j, n + k), (j, n + k, k)]
    return TriangleMesh(verts, np.asarray(faces))


BUST_HEAD_RADIUS = 0.1
BUST_NECK_RADIUS = 0.05
BUST_TORSO_RADIUS = 0.18
BUST_OFFSET = 0.45  # default human-mode prism depth below the head top


def bust(head_z: float = 1.6) -> Scene:
    """Spherical head on a neck and a torso cylinder, no supporting plane.

    The reference is the visible surface a human-mode selection should keep:
    the head, the exposed neck wall, the torso's top ring and its wall down to
    ``BUST_OFFSET`` below the head top.
    """
    rh, rn, rt = BUST_HEAD_RADIUS, BUST_NECK_RADIUS, BUST_TORSO_RADIUS
    head = sphere_mesh((0.0, 0.0, head_z), rh, 48, 96)
    neck = cylinder_mesh((0.0, 0.0, head_z - 0.2), rn, 0.15, 48)
    torso = cylinder_mesh((0.0, 0.0, head_z - 0.8), rt, 0.6, 96)
    # head vertices hidden inside the neck are not part of the visible surface
    v = head.vertices
    hidden = (np.hypot(v[:, 0], v[:, 1]) < rn) & (v[:, 2] < head_z)
    neck_top = head_z - np.sqrt(rh * rh - rn * rn)
    shoulder = head_z - 0.2
    floor = head_z + rh - BUST_OFFSET
    reference = TriangleMesh.concatenate([
        head.submesh(~hidden),
        tube_mesh((0.0, 0.0, shoulder), rn, neck_top - shoulder, 48, 4),
        annulus_mesh((0.0, 0.0, shoulder), rn, rt, 96),
        tube_mesh((0.0, 0.0, floor), rt, shoulder - floor, 96, 4),
    ])
    return Scene(
        mesh=TriangleMesh.concatenate([head, neck, torso]),
        reference=reference,
        center=np.array([0.0, 0.0, head_z - 0.1]),
        mode="human",
    )


def sphere_and_box() -> Scene:
    """Tracking target: a ball, a tall box turned 30 degrees and a low box on a floor patch.

    The objects are spread well away from the orbit axis so that rotation
    about it is pinned down by box faces with a long lever arm.
    """
    ball = sphere_mesh((0.14, 0.08, 0.18), 0.18, 40, 80)
    turn = RigidTransform.from_rotvec([0.0, 0.0, np.radians(30.0)], [-0.16, -0.12, 0.0])
    block = box_mesh((-0.14, -0.10, 0.0), (0.14, 0.10, 0.44)).transformed(turn)
    low = box_mesh((-0.06, 0.24, 0.0), (0.10, 0.36, 0.14))
    floor = quad_mesh((0.0, 0.0, 0.0), 0.5, 0.5, n=4)
    return Scene(
        mesh=TriangleMesh.concatenate([ball, block, low, floor]),
        reference=TriangleMesh.concatenate([ball, block, low]),
        center=np.array([0.0, 0.0, 0.16]),
        mode="table",
    )


BUILTIN_SCENES = {
    "head_on_table": head_on_table,
    "bust": bust,
    "sphere_and_box": sphere_and_box,
}
