"""Sequential frame-to-model reconstruction: track, integrate, predict."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, DepthFrame, RigidTransform
from .registration import W_ICP, W_SENSOR, FilterParams, IcpParams, track_frame
from .tsdf import TsdfVolume


@dataclass(frozen=True)
class FrameRecord:
    index: int
    converged: bool
    degenerate: bool
    icp_rms: float
    inlier_fraction: float
    iterations: int


@dataclass(eq=False)
class ReconstructionResult:
    volume: TsdfVolume
    poses: list
    records: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def lost_frames(self) -> int:
        """Frames after the first whose ICP failed or was degenerate."""
        return sum(1 for r in self.records[1:] if not r.converged)

    @property
    def frames_per_second(self) -> float:
        return len(self.records) / self.seconds if self.seconds > 0 else float("inf")


def predict_pose(prev_estimate: RigidTransform, prev_sensor: RigidTransform, sensor: RigidTransform) -> RigidTransform:
    """Previous estimate advanced by the motion the sensor measured since then."""
    return prev_estimate @ (prev_sensor.inverse() @ sensor)


def reconstruct(
    frames,
    sensor_poses,
    K: CameraIntrinsics,
    volume: TsdfVolume,
    icp: IcpParams | None = None,
    filtering: FilterParams | None = None,
    w_icp: float = W_ICP,
    w_sensor: float = W_SENSOR,
) -> ReconstructionResult:
    """Fuse ``frames`` (an iterable of :class:`DepthFrame`) into ``volume``.

    Frame 0 is placed at its sensor pose. Every later frame is tracked against
    the surface ray-cast from the previous estimate, with ICP starting from
    :func:`predict_pose`, and is then integrated at the fused pose.
    """
    sensor_poses = list(sensor_poses)
    poses: list[RigidTransform] = []
    records: list[FrameRecord] = []
    prediction = None
    t0 = time.perf_counter()
    for i, frame in enumerate(frames):
        if i >= len(sensor_poses):
            raise ValueError(f"frame {i} has no sensor pose")
        if not isinstance(frame, DepthFrame):
            raise TypeError("frames must be DepthFrame instances")
        start = sensor_poses[0] if i == 0 else predict_pose(poses[-1], sensor_poses[i - 1], sensor_poses[i])
        res = track_frame(frame, prediction, sensor_poses[i], start, K, icp, w_icp, w_sensor, filtering)
        pose = res.transform
        volume.integrate(frame, pose, K)
        prediction = volume.raycast(pose, K)
        poses.append(pose)
        records.append(FrameRecord(i, res.converged, res.degenerate, float(res.rms_error),
                                   float(res.inlier_fraction), int(res.iterations)))
    if len(poses) != len(sensor_poses):
        raise ValueError(f"{len(poses)} frames but {len(sensor_poses)} sensor poses")
    return ReconstructionResult(volume, poses, records, time.perf_counter() - t0)


def pose_errors(estimated, truth) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame translation error (m) and rotation error (degrees)."""
    t = np.array([np.linalg.norm(e.translation - g.translation) for e, g in zip(estimated, truth)])
    r = np.array([np.degrees((g.inverse() @ e).rotation_angle()) for e, g in zip(estimated, truth)])
    return t, r
