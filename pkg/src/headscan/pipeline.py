"""End-to-end pipeline: simulate, reconstruct, select, scale, export, evaluate.

Each stage reads the previous stage's files from the output directory and
writes its own, so running the stages one by one gives the same files as
:func:`run_pipeline`.
"""
from __future__ import annotations

import csv
import hashlib
import json
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .config import ConfigError, PipelineConfig
from .evaluation import colorize_by_distance, hausdorff_report
from .frames import FrameDirectory, read_poses, write_poses
from .geometry import CameraIntrinsics, PointCloud, TriangleMesh
from .meshing import marching_cubes
from .meshio import read_mesh, read_ply, write_ply, write_stl
from .reconstruction import pose_errors, reconstruct
from .registration import FilterParams, IcpParams
from .scaling import PrinterVolume, compute_loop_diameter, scale_factor, scale_mesh
from .scanner import SensorNoiseModel, circular_trajectory, perturb_poses, render_depth
from .scenes import BUILTIN_SCENES
from .segmentation import ransac_plane, select_head_on_table, select_human_head
from .tsdf import TsdfVolume

STAGES = ("simulate", "reconstruct", "select", "scale", "export", "evaluate")
EXIT_CODES = {"config": 2, "simulate": 10, "reconstruct": 11, "select": 12, "scale": 13, "export": 14,
              "evaluate": 15}

FRAMES_DIR = "frames"
SCAN_META = "scan.json"
REFERENCE = "reference.ply"
POSES_ESTIMATED = "poses_estimated.txt"
POSE_LOG = "pose_log.csv"
TSDF_SNAPSHOT = "tsdf.bin"
RECONSTRUCTION = "reconstruction.ply"
HEAD = "head.ply"
HEAD_SCALED = "head_scaled.ply"
SCALE_INFO = "scale.json"
PRINT_STL = "head_print.stl"
COMPARISON = "comparison.ply"
REPORT_JSON = "report.json"
REPORT_TXT = "report.txt"
MANIFEST = "manifest.json"
TIMINGS = "timings.csv"


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.exit_code = EXIT_CODES.get(stage, 1)


@contextmanager
def _stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as e:  # surface every failure with the stage that raised it
        raise StageError(name, f"{type(e).__name__}: {e}") from e


def camera_from_config(cfg: PipelineConfig) -> CameraIntrinsics:
    c = cfg.camera
    if c.hfov_deg is not None:
        return CameraIntrinsics.from_fov(c.width, c.height, c.hfov_deg)
    cx = (c.width - 1) / 2.0 if c.cx is None else c.cx
    cy = (c.height - 1) / 2.0 if c.cy is None else c.cy
    return CameraIntrinsics(c.fx, c.fy, cx, cy, c.width, c.height)


def noise_from_config(cfg: PipelineConfig) -> SensorNoiseModel:
    n = cfg.noise
    if not n.enabled:
        return SensorNoiseModel.noiseless(cfg.seed)
    return SensorNoiseModel(n.depth_sigma, n.depth_dropout, n.angle_sigma_deg, n.translation_sigma, cfg.seed)


def frames_dir(cfg: PipelineConfig) -> Path:
    if cfg.input_kind() == "frames":
        return Path(cfg.input)
    return Path(cfg.output_dir) / FRAMES_DIR


def _out(cfg: PipelineConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def simulate(cfg: PipelineConfig) -> dict:
    """Render the configured orbit of a builtin scene or mesh into a frame directory."""
    with _stage("simulate"):
        kind = cfg.input_kind()
        if kind == "frames":
            fd = FrameDirectory(cfg.input)
            fd.validate()
            return {"frames": len(fd), "path": str(fd.path)}
        if kind == "builtin":
            scene = BUILTIN_SCENES[cfg.input.split(":", 1)[1]]()
            mesh, reference, center, mode = scene.mesh, scene.reference, scene.center, scene.mode
        else:
            mesh = read_mesh(cfg.input)
            reference = mesh
            lo, hi = mesh.bounds()
            center = (lo + hi) / 2.0
            mode = cfg.selection.mode
        K = camera_from_config(cfg)
        noise = noise_from_config(cfg)
        t = cfg.trajectory
        truth = circular_trajectory(center, t.radius, t.height, t.n_frames)
        sensor = perturb_poses(truth, noise)
        frames = [render_depth(mesh, p, K, noise, i) for i, p in enumerate(truth.poses)]
        out = _out(cfg)
        fd = FrameDirectory(out / FRAMES_DIR)
        fd.write(frames, sensor.poses, K, truth.poses)
        _dump_json({"center": [float(x) for x in center], "mode": mode, "reference": f"../{REFERENCE}"}, fd.path / SCAN_META)
        write_ply(reference, out / REFERENCE)
        return {"frames": len(frames)}


def _scan_meta(fd: FrameDirectory) -> dict:
    p = fd.path / SCAN_META
    return json.loads(p.read_text()) if p.exists() else {}


def build_volume(cfg: PipelineConfig, center) -> TsdfVolume:
    t = cfg.tsdf
    voxel = t.voxel_size if t.voxel_size is not None else t.extent / t.resolution
    origin = np.asarray(center, dtype=np.float64) - voxel * (t.resolution - 1) / 2.0
    return TsdfVolume(t.resolution, voxel, origin, t.trunc_multiple * voxel, t.w_alpha)


def _fmt(x: float) -> str:
    return "%.9g" % x


def reconstruct_stage(cfg: PipelineConfig) -> dict:
    """Track and fuse the frames; write poses, pose log, TSDF snapshot and raw mesh."""
    with _stage("reconstruct"):
        fd = FrameDirectory(frames_dir(cfg))
        fd.validate()
        K = fd.intrinsics()
        sensor = fd.sensor_poses()
        gt = fd.gt_poses()
        center = cfg.tsdf.center if cfg.tsdf.center is not None else _scan_meta(fd).get("center")
        if center is None:
            raise ConfigError("tsdf.center is required for frame directories without scan.json")
        volume = build_volume(cfg, center)
        i = cfg.icp
        icp = IcpParams(i.max_iterations, i.max_correspondence_distance, i.max_normal_angle,
                        i.convergence_threshold, i.degeneracy_threshold)
        f = cfg.filter
        result = reconstruct(fd.frames(), sensor, K, volume, icp, FilterParams(f.sigma_space, f.sigma_range, 1, f.subsample),
                             cfg.fusion.w_icp, cfg.fusion.w_sensor)
        out = _out(cfg)
        write_poses(result.poses, out / POSES_ESTIMATED)
        _write_pose_log(out / POSE_LOG, result, sensor, gt)
        n_track = max(len(result.records) - 1, 1)
        lost = result.lost_frames
        if lost / n_track > cfg.max_tracking_loss:
            worst = [r.index for r in result.records[1:] if not r.converged][:10]
            raise StageError("reconstruct", f"tracking lost on {lost} of {n_track} tracked frames "
                             f"(limit {cfg.max_tracking_loss:.0%}); first lost frames {worst}; see {POSE_LOG}")
        volume.save(out / TSDF_SNAPSHOT)
        mesh = marching_cubes(volume)
        if mesh.is_empty:
            raise StageError("reconstruct", "the fused volume contains no surface")
        write_ply(mesh, out / RECONSTRUCTION)
        return {"frames": len(result.records), "lost_frames": lost, "integration_seconds": result.seconds,
                "frames_per_second": result.frames_per_second}


def _write_pose_log(path: Path, result, sensor, gt) -> None:
    header = ["frame", "converged", "degenerate", "icp_rms_m", "inlier_fraction", "iterations"]
    rows = []
    if gt is not None:
        header += ["est_translation_err_mm", "est_rotation_err_deg", "sensor_translation_err_mm",
                   "sensor_rotation_err_deg"]
        te, re = pose_errors(result.poses, gt)
        ts, rs = pose_errors(sensor, gt)
    for k, r in enumerate(result.records):
        row = [r.index, int(r.converged), int(r.degenerate), _fmt(r.icp_rms), _fmt(r.inlier_fraction), r.iterations]
        if gt is not None:
            row += [_fmt(1000 * te[k]), _fmt(re[k]), _fmt(1000 * ts[k]), _fmt(rs[k])]
        rows.append(row)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def select_mesh(mesh: TriangleMesh, poses, cfg: PipelineConfig) -> TriangleMesh:
    """Keep the faces whose vertices all fall inside the selection prism."""
    cloud = PointCloud(mesh.vertices)
    s = cfg.selection
    if s.mode == "table":
        plane, inliers = ransac_plane(cloud, s.dist_thresh, s.ransac_iterations, cfg.seed)
        sel = select_head_on_table(cloud, plane, cloud.subset(inliers), poses, s.dist_thresh)
    else:
        sel = select_human_head(cloud, poses, s.k, s.offset_head)
    mask = np.zeros(len(mesh.vertices), dtype=bool)
    mask[sel.indices] = True
    head = mesh.submesh(mask)
    if head.is_empty:
        raise StageError("select", "selection kept no complete triangle")
    return head


def select_stage(cfg: PipelineConfig) -> dict:
    with _stage("select"):
        out = _out(cfg)
        mesh = read_ply(out / RECONSTRUCTION)
        poses = read_poses(out / POSES_ESTIMATED)
        head = select_mesh(mesh, poses, cfg)
        write_ply(head, out / HEAD)
        return {"faces": len(head.faces), "vertices": len(head.vertices)}


def scale_stage(cfg: PipelineConfig) -> dict:
    with _stage("scale"):
        out = _out(cfg)
        head = read_ply(out / HEAD)
        poses = read_poses(out / POSES_ESTIMATED)
        vol = PrinterVolume(cfg.printer.x, cfg.printer.y, cfg.printer.z)
        d_loop = compute_loop_diameter(poses)
        sf = scale_factor(vol.base_length, d_loop)
        scaled = scale_mesh(head, sf, vol)
        write_ply(scaled, out / HEAD_SCALED)
        lo, hi = scaled.bounds()
        info = {"d_loop_m": d_loop, "l_vol_m": vol.base_length, "scale_factor": sf,
                "scaled_size_mm": [float(x) for x in (hi - lo) * 1000.0]}
        _dump_json(info, out / SCALE_INFO)
        return info


def export_stage(cfg: PipelineConfig) -> dict:
    """Binary STL for the printer, in millimeters as slicers expect."""
    with _stage("export"):
        out = _out(cfg)
        scaled = read_ply(out / HEAD_SCALED)
        write_stl(TriangleMesh(scaled.vertices * 1000.0, scaled.faces), out / PRINT_STL)
        return {"triangles": len(scaled.faces)}


def reference_path(cfg: PipelineConfig) -> Path | None:
    if cfg.evaluation.reference is not None:
        return Path(cfg.evaluation.reference)
    fd = FrameDirectory(frames_dir(cfg))
    ref = _scan_meta(fd).get("reference") if fd.path.exists() else None
    if ref is not None and (fd.path / ref).exists():
        return fd.path / ref
    return None


def evaluate_meshes(reference: TriangleMesh, test: TriangleMesh, out_dir, sampling="vertices", seed: int = 0):
    """Write report.json, report.txt and the distance-colored comparison mesh."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = hausdorff_report(reference, test, sampling, seed)
    (out / REPORT_JSON).write_text(report.to_json())
    (out / REPORT_TXT).write_text(report.to_text())
    write_ply(colorize_by_distance(test, reference), out / COMPARISON, colors=True)
    return report


def evaluate_stage(cfg: PipelineConfig) -> dict:
    with _stage("evaluate"):
        ref = reference_path(cfg)
        if ref is None:
            raise StageError("evaluate", "no ground-truth reference: set evaluation.reference")
        out = _out(cfg)
        report = evaluate_meshes(read_mesh(ref), read_ply(out / HEAD), out, cfg.evaluation.sampling, cfg.seed)
        return {"two_sided_rms_pct": report.bbox_pct["rms"]}


STAGE_FUNCS = {
    "simulate": simulate,
    "reconstruct": reconstruct_stage,
    "select": select_stage,
    "scale": scale_stage,
    "export": export_stage,
    "evaluate": evaluate_stage,
}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Run every stage in order and write the manifest and timing log.

    ``manifest.json`` holds the configuration (minus the output directory)
    and a checksum of every artifact, so it is identical across runs with the
    same configuration and seed. Wall-clock timings go to ``timings.csv``.
    Evaluation is skipped when a recorded scan has no reference mesh.
    """
    cfg.validate()
    out = _out(cfg)
    timings = []
    summaries = {}
    for name in STAGES:
        if name == "evaluate" and reference_path(cfg) is None:
            summaries[name] = {"skipped": "no reference mesh"}
            continue
        t0 = time.perf_counter()
        summaries[name] = STAGE_FUNCS[name](cfg)
        timings.append((name, time.perf_counter() - t0))
    rec = summaries.get("reconstruct", {})
    with open(out / TIMINGS, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "seconds", "frames_per_second"])
        for name, sec in timings:
            fps = _fmt(rec["frames_per_second"]) if name == "reconstruct" else ""
            w.writerow([name, "%.3f" % sec, fps])
    echo = cfg.to_dict()
    echo.pop("output_dir")
    artifacts = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name not in (MANIFEST, TIMINGS):
            artifacts[str(p.relative_to(out))] = _sha256(p)
    deterministic = {k: {kk: vv for kk, vv in v.items() if "seconds" not in kk and "per_second" not in kk}
                     for k, v in summaries.items()}
    _dump_json({"config": echo, "stages": deterministic, "artifacts": artifacts, "timings": TIMINGS},
               out / MANIFEST)
    return {"output_dir": str(out), "stages": summaries, "timings": dict(timings)}
