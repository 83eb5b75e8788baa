"""Fit the selected model into a printer's build volume and write print files."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import TriangleMesh
from .meshio import write_ply, write_stl
from .scanner import Trajectory


class BuildVolumeError(ValueError):
    """Scaled model does not fit the printer."""


@dataclass(frozen=True)
class PrinterVolume:
    """Build envelope in meters. Default: 254 x 254 x 305 mm."""

    x: float = 0.254
    y: float = 0.254
    z: float = 0.305

    def __post_init__(self):
        if min(self.x, self.y, self.z) <= 0:
            raise ValueError("printer dimensions must be positive")

    @property
    def base_length(self) -> float:
        """Longest model diameter the base can take."""
        return min(self.x, self.y)


def compute_loop_diameter(poses) -> float:
    """Larger of the x and y extents of the pose positions."""
    if isinstance(poses, Trajectory):
        pos = poses.positions()
    else:
        pos = np.array([getattr(p, "translation", p) for p in poses], dtype=np.float64).reshape(-1, 3)
    if len(pos) < 2:
        raise ValueError("loop diameter needs at least 2 poses")
    extent = pos.max(axis=0) - pos.min(axis=0)
    return float(max(extent[0], extent[1]))


def scale_factor(l_vol: float, d_loop: float) -> float:
    if not (l_vol > 0 and d_loop > 0):
        raise ValueError(f"scale factor needs positive lengths, got l_vol={l_vol}, d_loop={d_loop}")
    return l_vol / d_loop


def scale_mesh(mesh: TriangleMesh, sf: float, volume: PrinterVolume | None = None) -> TriangleMesh:
    """Scale about the vertex centroid by ``sf`` and place on the build plate.

    The scaled bounding box is centered over the plate in x and y and rests on
    z = 0. Raises :class:`BuildVolumeError` if it does not fit.
    """
    if not sf > 0:
        raise ValueError("scale factor must be positive")
    volume = volume or PrinterVolume()
    if len(mesh.vertices) == 0:
        raise ValueError("cannot scale an empty mesh")
    c = mesh.vertices.mean(axis=0)
    v = (mesh.vertices - c) * sf
    lo, hi = v.min(axis=0), v.max(axis=0)
    size = hi - lo
    limits = np.array([volume.x, volume.y, volume.z])
    if np.any(size > limits):
        raise BuildVolumeError(
            f"scaled model {size * 1000} mm exceeds build volume {limits * 1000} mm"
        )
    shift = np.array([volume.x / 2 - (lo[0] + hi[0]) / 2, volume.y / 2 - (lo[1] + hi[1]) / 2, -lo[2]])
    v = v + shift
    return TriangleMesh(v, mesh.faces, mesh.colors)


def fit_to_printer(mesh: TriangleMesh, poses, volume: PrinterVolume | None = None) -> tuple[TriangleMesh, float]:
    """Scale so the pose-loop diameter spans the printer base."""
    volume = volume or PrinterVolume()
    sf = scale_factor(volume.base_length, compute_loop_diameter(poses))
    return scale_mesh(mesh, sf, volume), sf


def export_stl(mesh: TriangleMesh, path) -> None:
    write_stl(mesh, path)


def export_ply(mesh: TriangleMesh, path, colors: bool | None = None) -> None:
    write_ply(mesh, path, colors)
