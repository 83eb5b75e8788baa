"""Exhaustive point-to-triangle distances, used as the oracle for the distance tool."""
import numpy as np

from headscan.geometry import TriangleMesh


def segment_distances(p, a, b):
    ab = b - a
    L = np.einsum("ij,ij->i", ab, ab)
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.where(L > 0, L, 1.0), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[:, None] * ab), axis=1)


def triangle_distances(p, a, b, c):
    """Distance from one point to many triangles: plane projection with a
    barycentric inside test, else the nearest edge."""
    n = np.cross(b - a, c - a)
    nn = np.einsum("ij,ij->i", n, n)
    safe = np.where(nn > 0, nn, 1.0)
    foot = p - (np.einsum("ij,ij->i", p - a, n) / safe)[:, None] * n
    w_a = np.einsum("ij,ij->i", np.cross(c - b, foot - b), n) / safe
    w_b = np.einsum("ij,ij->i", np.cross(a - c, foot - c), n) / safe
    w_c = 1.0 - w_a - w_b
    inside = (nn > 0) & (w_a >= 0) & (w_b >= 0) & (w_c >= 0)
    edge = np.minimum(np.minimum(segment_distances(p, a, b), segment_distances(p, b, c)), segment_distances(p, c, a))
    return np.where(inside, np.linalg.norm(p - foot, axis=1), edge)


def exhaustive(points, mesh):
    t = mesh.triangles()
    return np.array([triangle_distances(p, t[:, 0], t[:, 1], t[:, 2]).min() for p in points])


def random_mesh(rng, n_faces, n_verts=None):
    n_verts = n_verts or n_faces
    v = rng.uniform(-0.5, 0.5, (n_verts, 3))
    f = np.array([rng.choice(n_verts, 3, replace=False) for _ in range(n_faces)])
    return TriangleMesh(v, f)
