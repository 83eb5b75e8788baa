"""Mesh-to-mesh distance metrics and distance colorization.

Directed distances go from sample points of one mesh (its vertices by
default) to the closest point on the other mesh's surface. Reports are in
centimeters and as a percentage of the reference mesh's bounding-box diagonal.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import TriangleMesh

M_TO_CM = 100.0
_CHUNK = 1 << 18  # point-triangle pairs evaluated per batch


def closest_point_on_triangles(p, a, b, c) -> np.ndarray:
    """Closest point of each triangle ``(a, b, c)`` to ``p``; all arrays (N, 3).

    Voronoi-region walk over vertices, edges and face, vectorized.
    """
    p, a, b, c = (np.asarray(x, dtype=np.float64) for x in (p, a, b, c))
    ab = b - a
    ac = c - a
    ap = p - a
    bp = p - b
    cp = p - c
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    out = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def take(mask, value):
        m = mask & ~done
        out[m] = value[m] if value.ndim == 2 else value
        done[m] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        take((d1 <= 0) & (d2 <= 0), a)
        take((d3 >= 0) & (d4 <= d3), b)
        take((d6 >= 0) & (d5 <= d6), c)
        v = d1 / (d1 - d3)
        take((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v[:, None] * ab)
        w = d2 / (d2 - d6)
        take((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w[:, None] * ac)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        take((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), b + w[:, None] * (c - b))
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        take(np.ones(len(p), dtype=bool), a + v[:, None] * ab + w[:, None] * ac)
    # zero-area triangles can leave NaNs in the face branch; fall back to edges
    bad = ~np.all(np.isfinite(out), axis=1)
    if bad.any():
        out[bad] = _closest_on_edges(p[bad], a[bad], b[bad], c[bad])
    return out


def _closest_on_segment(p, a, b):
    ab = b - a
    L = np.einsum("ij,ij->i", ab, ab)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(L > 0, np.einsum("ij,ij->i", p - a, ab) / L, 0.0)
    return a + np.clip(t, 0.0, 1.0)[:, None] * ab


def _closest_on_edges(p, a, b, c):
    cands = np.stack([_closest_on_segment(p, a, b), _closest_on_segment(p, b, c), _closest_on_segment(p, c, a)], 1)
    d = np.sum((cands - p[:, None]) ** 2, axis=2)
    return cands[np.arange(len(p)), np.argmin(d, axis=1)]


def _pair_distances(points, tris, qi, ti):
    out = np.empty(len(qi))
    for s in range(0, len(qi), _CHUNK):
        q = points[qi[s:s + _CHUNK]]
        t = tris[ti[s:s + _CHUNK]]
        cp = closest_point_on_triangles(q, t[:, 0], t[:, 1], t[:, 2])
        out[s:s + _CHUNK] = np.sqrt(np.sum((cp - q) ** 2, axis=1))
    return out


def point_to_mesh_distances(points, mesh: TriangleMesh) -> np.ndarray:
    """Exact distance from each point to the closest point on ``mesh``.

    The nearest vertex gives an upper bound ``u``; only triangles whose
    bounding sphere comes within ``u`` are then tested. Triangles much larger
    than the typical one are always tested so they do not inflate the search
    radius for everyone else.
    """
    if mesh.is_empty or len(mesh.faces) == 0:
        raise ValueError("distance to an empty mesh is undefined")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return np.zeros(0)
    tris = mesh.triangles()
    centers = tris.mean(axis=1)
    radii = np.sqrt(np.max(np.sum((tris - centers[:, None]) ** 2, axis=2), axis=1))

    upper, _ = cKDTree(mesh.vertices[np.unique(mesh.faces)]).query(pts)
    best = np.full(len(pts), np.inf)

    big = radii > 4.0 * np.median(radii) + 1e-12
    big_idx = np.flatnonzero(big)
    if len(big_idx):
        qi = np.repeat(np.arange(len(pts)), len(big_idx))
        ti = np.tile(big_idx, len(pts))
        np.minimum.at(best, qi, _pair_distances(pts, tris, qi, ti))
    small_idx = np.flatnonzero(~big)
    if len(small_idx):
        r_max = radii[small_idx].max()
        tree = cKDTree(centers[small_idx])
        # sphere test: a triangle can only beat u if |p - center| <= u + radius
        lists = tree.query_ball_point(pts, upper * (1 + 1e-9) + r_max + 1e-12)
        counts = np.fromiter((len(x) for x in lists), dtype=np.int64, count=len(pts))
        qi = np.repeat(np.arange(len(pts)), counts)
        ti = small_idx[np.fromiter((j for x in lists for j in x), dtype=np.int64, count=int(counts.sum()))]
        d = _pair_distances(pts, tris, qi, ti)
        np.minimum.at(best, qi, d)
    return best


def point_to_mesh_distance(p, mesh: TriangleMesh) -> float:
    return float(point_to_mesh_distances(np.asarray(p, dtype=np.float64).reshape(1, 3), mesh)[0])


def sample_surface(mesh: TriangleMesh, n: int, seed: int = 0) -> np.ndarray:
    """``n`` points uniformly distributed by area over the surface."""
    if n <= 0:
        raise ValueError("sample count must be positive")
    rng = np.random.default_rng(seed)
    areas = mesh.face_areas()
    total = areas.sum()
    if not total > 0:
        raise ValueError("mesh has zero surface area")
    f = rng.choice(len(areas), size=n, p=areas / total)
    u, v = rng.random(n), rng.random(n)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    t = mesh.triangles()[f]
    return t[:, 0] + u[:, None] * (t[:, 1] - t[:, 0]) + v[:, None] * (t[:, 2] - t[:, 0])


@dataclass(frozen=True)
class DistanceStats:
    """Summary of one set of distances, in centimeters."""

    mean: float
    max: float
    rms: float
    count: int

    @classmethod
    def from_meters(cls, d) -> "DistanceStats":
        d = np.asarray(d, dtype=np.float64) * M_TO_CM
        return cls(float(d.mean()), float(d.max()), float(np.sqrt(np.mean(d * d))), int(len(d)))


@dataclass(frozen=True)
class DistanceReport:
    """Directed (reference -> test, test -> reference) and two-sided metrics.

    The two-sided value of each metric is the larger of the two directed
    values. ``bbox_pct`` holds ``100 * metric / bbox_diagonal`` for the
    two-sided metrics, with the diagonal taken from the reference mesh.
    """

    forward: DistanceStats
    backward: DistanceStats
    two_sided: DistanceStats
    bbox_diagonal: float
    bbox_pct: dict
    sample_count: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = [f"bbox_diagonal_cm = {self.bbox_diagonal:.6f}", f"sample_count = {self.sample_count}"]
        for name in ("forward", "backward", "two_sided"):
            s = getattr(self, name)
            lines += [f"{name}.{k}_cm = {getattr(s, k):.6f}" for k in ("mean", "max", "rms")]
            lines.append(f"{name}.count = {s.count}")
        lines += [f"two_sided.{k}_pct = {self.bbox_pct[k]:.6f}" for k in ("mean", "max", "rms")]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "DistanceReport":
        return cls(
            DistanceStats(**d["forward"]),
            DistanceStats(**d["backward"]),
            DistanceStats(**d["two_sided"]),
            float(d["bbox_diagonal"]),
            dict(d["bbox_pct"]),
            int(d["sample_count"]),
        )


def implied_diagonal(metric_cm: float, pct: float) -> float:
    """Bounding-box diagonal implied by a metric and its percentage."""
    return 100.0 * metric_cm / pct


def _samples(mesh: TriangleMesh, sampling, seed: int) -> np.ndarray:
    if sampling == "vertices":
        used = np.unique(mesh.faces) if len(mesh.faces) else np.arange(len(mesh.vertices))
        return mesh.vertices[used]
    if isinstance(sampling, int) and not isinstance(sampling, bool):
        return sample_surface(mesh, sampling, seed)
    raise ValueError(f"sampling must be 'vertices' or a positive sample count, got {sampling!r}")


def hausdorff_report(m1: TriangleMesh, m2: TriangleMesh, sampling="vertices", seed: int = 0) -> DistanceReport:
    """Compare ``m1`` (reference) with ``m2``.

    ``sampling`` is ``"vertices"`` (every referenced vertex) or an integer
    count of area-uniform surface samples per mesh.
    """
    for m in (m1, m2):
        if m.is_empty or len(m.faces) == 0:
            raise ValueError("hausdorff_report needs two non-empty meshes")
    d12 = point_to_mesh_distances(_samples(m1, sampling, seed), m2)
    d21 = point_to_mesh_distances(_samples(m2, sampling, seed + 1), m1)
    fwd = DistanceStats.from_meters(d12)
    bwd = DistanceStats.from_meters(d21)
    both = DistanceStats(max(fwd.mean, bwd.mean), max(fwd.max, bwd.max), max(fwd.rms, bwd.rms),
                         fwd.count + bwd.count)
    diag = m1.bbox_diagonal() * M_TO_CM
    if not diag > 0:
        raise ValueError("reference mesh has a degenerate bounding box")
    pct = {k: 100.0 * getattr(both, k) / diag for k in ("mean", "max", "rms")}
    return DistanceReport(fwd, bwd, both, diag, pct, fwd.count + bwd.count)


def distance_ramp(d, d_min: float, d_max: float) -> np.ndarray:
    """Red (small) -> green -> blue (large) colors, clamped to ``[d_min, d_max]``."""
    d = np.asarray(d, dtype=np.float64)
    if d_max > d_min:
        t = np.clip((d - d_min) / (d_max - d_min), 0.0, 1.0)
    else:
        t = np.where(d > d_min, 1.0, 0.0)
    rgb = np.where(
        (t < 0.5)[:, None],
        np.column_stack([255 * (1 - 2 * t), 510 * t, np.zeros_like(t)]),
        np.column_stack([np.zeros_like(t), 255 * (2 - 2 * t), 255 * (2 * t - 1)]),
    )
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def colorize_by_distance(mesh: TriangleMesh, reference: TriangleMesh, d_min: float = 0.0,
                         d_max: float | None = None) -> TriangleMesh:
    """Color each vertex of ``mesh`` by its distance (meters) to ``reference``.

    ``d_max`` defaults to the largest distance found.
    """
    if mesh.is_empty or reference.is_empty:
        raise ValueError("colorize_by_distance needs non-empty meshes")
    d = point_to_mesh_distances(mesh.vertices, reference)
    hi = float(d.max()) if d_max is None else float(d_max)
    return mesh.with_colors(distance_ramp(d, d_min, hi))
