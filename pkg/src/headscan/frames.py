"""On-disk layout for a recorded (or simulated) depth scan.

A frame directory holds::

    intrinsics.json        {"fx", "fy", "cx", "cy", "width", "height"}
    depth_00000.raw ...    one file per frame, see below
    poses_sensor.txt       one camera-to-world pose per line
    poses_gt.txt           optional ground truth, same format

Depth files start with the ASCII line ``DEPTH16 <width> <height>\\n`` followed
by ``width * height`` little-endian uint16 depths in millimeters, row-major;
0 marks a missing measurement. Pose lines hold the 12 entries of the top three
rows of the 4x4 matrix, row-major, separated by spaces.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics, DepthFrame, RigidTransform

DEPTH_MAGIC = b"DEPTH16"
MAX_DEPTH_M = 65.535


class FrameFormatError(ValueError):
    pass


def depth_path(directory, index: int) -> Path:
    return Path(directory) / f"depth_{index:05d}.raw"


def write_depth(frame: DepthFrame, path) -> None:
    d = np.where(frame.valid, frame.depth, 0.0)
    if np.any(d > MAX_DEPTH_M):
        raise FrameFormatError(f"depth beyond {MAX_DEPTH_M} m cannot be stored in 16-bit millimeters")
    mm = np.rint(d * 1000.0).astype("<u2")
    mm[frame.valid & (mm == 0)] = 1  # keep sub-millimeter readings valid
    with open(path, "wb") as fh:
        fh.write(b"%s %d %d\n" % (DEPTH_MAGIC, frame.width, frame.height))
        fh.write(mm.tobytes())


def read_depth(path) -> DepthFrame:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0 or nl > 64:
        raise FrameFormatError(f"{path}: missing DEPTH16 header line")
    parts = data[:nl].split()
    if len(parts) != 3 or parts[0] != DEPTH_MAGIC:
        raise FrameFormatError(f"{path}: bad header {data[:nl]!r}")
    try:
        w, h = int(parts[1]), int(parts[2])
    except ValueError:
        raise FrameFormatError(f"{path}: bad header {data[:nl]!r}") from None
    body = data[nl + 1:]
    if len(body) != 2 * w * h:
        raise FrameFormatError(f"{path}: expected {2 * w * h} bytes after the header at byte {nl + 1}, found {len(body)}")
    mm = np.frombuffer(body, dtype="<u2").reshape(h, w)
    return DepthFrame(mm.astype(np.float64) / 1000.0, mm > 0)


def write_poses(poses, path) -> None:
    with open(path, "w") as fh:
        for p in poses:
            fh.write(" ".join("%.17g" % x for x in p.as_row()) + "\n")


def read_poses(path) -> list[RigidTransform]:
    poses = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            try:
                vals = [float(x) for x in line.split()]
            except ValueError:
                raise FrameFormatError(f"{path}:{lineno}: non-numeric pose entry") from None
            if len(vals) != 12:
                raise FrameFormatError(f"{path}:{lineno}: expected 12 values, found {len(vals)}")
            poses.append(RigidTransform.from_row(vals))
    return poses


def write_intrinsics(K: CameraIntrinsics, path) -> None:
    d = {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy, "width": K.width, "height": K.height}
    Path(path).write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")


def read_intrinsics(path) -> CameraIntrinsics:
    d = json.loads(Path(path).read_text())
    try:
        return CameraIntrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                                int(d["width"]), int(d["height"]))
    except KeyError as e:
        raise FrameFormatError(f"{path}: missing intrinsics field {e}") from None


class FrameDirectory:
    """Reader/writer for the directory layout described in the module docstring."""

    def __init__(self, path):
        self.path = Path(path)

    def write(self, frames, sensor_poses, K: CameraIntrinsics, gt_poses=None) -> None:
        if len(frames) != len(sensor_poses):
            raise ValueError("one sensor pose per frame required")
        self.path.mkdir(parents=True, exist_ok=True)
        write_intrinsics(K, self.path / "intrinsics.json")
        for i, f in enumerate(frames):
            write_depth(f, depth_path(self.path, i))
        write_poses(sensor_poses, self.path / "poses_sensor.txt")
        if gt_poses is not None:
            write_poses(gt_poses, self.path / "poses_gt.txt")

    def intrinsics(self) -> CameraIntrinsics:
        return read_intrinsics(self.path / "intrinsics.json")

    def sensor_poses(self) -> list[RigidTransform]:
        return read_poses(self.path / "poses_sensor.txt")

    def gt_poses(self) -> list[RigidTransform] | None:
        p = self.path / "poses_gt.txt"
        return read_poses(p) if p.exists() else None

    def __len__(self) -> int:
        return len(sorted(self.path.glob("depth_*.raw")))

    def frame(self, index: int) -> DepthFrame:
        return read_depth(depth_path(self.path, index))

    def frames(self):
        for i in range(len(self)):
            yield self.frame(i)

    def validate(self) -> None:
        n = len(self)
        if n == 0:
            raise FrameFormatError(f"{self.path}: no depth_*.raw frames")
        for i in range(n):
            if not depth_path(self.path, i).exists():
                raise FrameFormatError(f"{self.path}: frame {i} missing (frames must be numbered from 0)")
        n_poses = len(self.sensor_poses())
        if n_poses != n:
            raise FrameFormatError(f"{self.path}: {n} frames but {n_poses} sensor poses")
