"""Acceptance suite: one group of tests per criterion, each at its stated tolerance.

The terminal summary prints one PASS/FAIL line per criterion together with
the measured values recorded here.
"""
import csv
import json
import struct
import time

import numpy as np
import pytest

from headscan.config import config_from_dict
from headscan.evaluation import DistanceReport, hausdorff_report, implied_diagonal, point_to_mesh_distances
from headscan.geometry import CameraIntrinsics, PointCloud, TriangleMesh
from headscan.meshing import marching_cubes
from headscan.meshio import read_ply, read_stl
from headscan.pipeline import run_pipeline
from headscan.registration import icp_point_to_plane
from headscan.scaling import PrinterVolume, compute_loop_diameter, export_ply, export_stl, fit_to_printer, scale_factor, scale_mesh
from headscan.scanner import SensorNoiseModel, circular_trajectory, render_depth
from headscan.scenes import BUILTIN_SCENES, head_mesh, quad_mesh, sphere_mesh
from headscan.segmentation import Plane, ransac_plane, select_head_on_table, select_human_head
from headscan.tsdf import TsdfVolume

from helpers import head_cloud, pose_error, random_transform
from mesh_oracle import exhaustive, random_mesh
from seg_oracle import bust_points, human_oracle, moved_plane, table_oracle, table_scene
from tsdf_oracle import fused

PRINTER = np.array([0.254, 0.254, 0.305])


def criterion(n, title):
    return pytest.mark.criterion(n, title)


# --- 1. end-to-end accuracy ----------------------------------------------------------

def head_scan_config(out, noise):
    return config_from_dict({
        "input": "builtin:head_on_table",
        "output_dir": str(out),
        "trajectory": {"n_frames": 120},
        "camera": {"width": 128, "height": 128, "hfov_deg": 34.0},
        "tsdf": {"resolution": 192, "extent": 0.6},
        "noise": {"enabled": noise},
    })


@criterion(1, "end-to-end accuracy: RMS <= 0.5% noise-free, <= 2.0% noisy, <= 120 s")
@pytest.mark.parametrize("noise, limit", [(False, 0.5), (True, 2.0)], ids=["noise_free", "noisy"])
def test_end_to_end_accuracy(tmp_path, record_property, noise, limit):
    height = BUILTIN_SCENES["head_on_table"]().reference.bounds()
    assert 0.18 <= height[1][2] - height[0][2] <= 0.25
    t0 = time.perf_counter()
    run_pipeline(head_scan_config(tmp_path, noise))
    seconds = time.perf_counter() - t0
    rep = DistanceReport.from_dict(json.loads((tmp_path / "report.json").read_text()))
    rms = rep.bbox_pct["rms"]
    record_property("measured", f"{'noisy' if noise else 'noise-free'} {rms:.3f}% in {seconds:.0f} s")
    assert rms <= limit
    assert seconds <= 120.0


# --- 2. TSDF oracle equivalence ------------------------------------------------------

def tsdf_scene(n):
    scene = BUILTIN_SCENES["sphere_and_box"]()
    K = CameraIntrinsics.from_fov(48, 40, 40.0)
    traj = circular_trajectory(scene.center, 0.9, 0.3, n)
    frames = [render_depth(scene.mesh, p, K, SensorNoiseModel(seed=4), i) for i, p in enumerate(traj.poses)]
    return scene, K, frames, traj.poses


def tsdf_volume(center, w_alpha):
    # irrational shift: keeps voxel centers off exact half-pixel projections
    shift = 1e-4 * np.array([np.sqrt(2), np.sqrt(3), np.sqrt(5)])
    return TsdfVolume.around(np.asarray(center) + shift, 0.5, 32, 4.0, w_alpha)


@criterion(2, "TSDF fusion equals brute-force weighted mean within 1e-9, W <= W_alpha, <= 5 s")
def test_tsdf_matches_oracle(record_property):
    t0 = time.perf_counter()
    scene, K, frames, poses = tsdf_scene(10)
    vol = tsdf_volume(scene.center, 64.0)
    for f, p in zip(frames, poses):
        vol.integrate(f, p, K)
    D, W = fused(vol, frames, poses, K)
    seconds = time.perf_counter() - t0
    err = np.abs(vol.tsdf - D).max()
    record_property("measured", f"max |D - oracle| {err:.1e}, {seconds:.2f} s")
    assert np.array_equal(vol.weight, W)
    assert err <= 1e-9
    assert vol.weight.max() <= vol.w_alpha
    assert (W > 0).mean() > 0.3
    assert seconds <= 5.0


@criterion(2, "TSDF fusion equals brute-force weighted mean within 1e-9, W <= W_alpha, <= 5 s")
def test_tsdf_weight_cap(record_property):
    scene, K, frames, poses = tsdf_scene(10)
    vol = tsdf_volume(scene.center, 3.0)
    for f, p in zip(frames, poses):
        vol.integrate(f, p, K)
        assert vol.weight.max() <= 3.0
    _, W = fused(vol, frames, poses, K)
    assert np.array_equal(vol.weight, np.minimum(W, 3.0))


# --- 3. ICP recovery -------------------------------------------------------------------

@criterion(3, "ICP recovers 50 perturbations within 0.05 deg / 0.5 mm in >= 49, monotone")
def test_icp_recovery(record_property):
    rng = np.random.default_rng(2024)
    target = head_cloud(2000)
    good, worst = 0, (0.0, 0.0)
    for _ in range(50):
        T = random_transform(rng, 10.0, 0.05)
        res = icp_point_to_plane(target.transformed(T.inverse()), target)
        assert np.all(np.diff(res.history) <= 0)
        deg, m = pose_error(res.transform, T)
        worst = (max(worst[0], deg), max(worst[1], m))
        good += deg <= 0.05 and m <= 0.0005
    record_property("measured", f"{good}/50 recovered, worst {worst[0]:.1e} deg / {1000 * worst[1]:.1e} mm")
    assert good >= 49


# --- 4. marching cubes ---------------------------------------------------------------

@criterion(4, "marching-cubes sphere: vertices within half a voxel, watertight, volume within 3%")
def test_marching_cubes_sphere(record_property):
    voxel, res, r = 0.005, 64, 0.12
    origin = np.full(3, -voxel * (res - 1) / 2)
    vol = TsdfVolume.from_sdf(lambda p: np.linalg.norm(p, axis=1) - r, res, voxel, origin)
    mesh = marching_cubes(vol)
    dev = np.abs(np.linalg.norm(mesh.vertices, axis=1) - r).max()
    e = np.sort(np.vstack([mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]], mesh.faces[:, [2, 0]]]), axis=1)
    edges, counts = np.unique(e, axis=0, return_counts=True)
    V, E, F = len(mesh.vertices), len(edges), len(mesh.faces)
    true = 4.0 / 3.0 * np.pi * r**3
    rel = abs(mesh.signed_volume() - true) / true
    record_property("measured", f"max dev {1000 * dev:.2f} mm, V-E+F {V - E + F}, volume off {100 * rel:.2f}%")
    assert dev <= voxel / 2
    assert np.all(counts == 2)
    assert V - E + F == 2
    assert rel <= 0.03


# --- 5. segmentation -------------------------------------------------------------------

@criterion(5, "selection equals brute-force prism oracle; rigid invariance on 10 transforms")
@pytest.mark.parametrize("seed", range(3))
def test_selection_equals_oracle(seed):
    rng = np.random.default_rng(seed)
    ball, table = table_scene(rng, 3000, 5000)
    clutter = rng.uniform([-1.4, -1.4, -0.2], [1.4, 1.4, 0.5], (2000, 3))
    pts = np.vstack([ball, table, clutter])
    assert len(pts) <= 10_000
    traj = circular_trajectory((0.05, -0.02, 0.0), 0.9, 0.35, 36)
    plane, inliers = ransac_plane(pts, 0.005, 300, seed=seed)
    sel = select_head_on_table(PointCloud(pts), plane, PointCloud(pts[inliers]), traj)
    assert np.array_equal(sel.indices, table_oracle(pts, plane, traj.positions(), 0.005))

    head, body = bust_points(rng, 3000, 6000)
    pts = np.vstack([head, body])
    traj = circular_trajectory((0, 0, 1.6), 0.8, 0.4, 36)
    for k, offset in ((200, 0.45), (120, 0.2)):
        sel = select_human_head(PointCloud(pts), traj, k=k, offset_head=offset)
        assert np.array_equal(sel.indices, human_oracle(pts, traj.positions(), k, offset))


@criterion(5, "selection equals brute-force prism oracle; rigid invariance on 10 transforms")
def test_selection_rigid_invariance():
    rng = np.random.default_rng(77)
    ball, table = table_scene(rng, 1500, 1500)
    table_pts = np.vstack([ball, table])
    head, body = bust_points(rng, 1000, 2000)
    bust = np.vstack([head, body])
    t_traj = circular_trajectory((0, 0, 0), 1.0, 0.3, 24)
    h_traj = circular_trajectory((0, 0, 1.6), 0.8, 0.4, 24)
    plane = Plane(0, 0, 1, 0)
    a_table = select_head_on_table(PointCloud(table_pts), plane, None, t_traj).indices
    a_human = select_human_head(PointCloud(bust), h_traj, k=150).indices
    for _ in range(10):
        T = random_transform(rng, 180.0, 2.0)
        b = select_head_on_table(PointCloud(T.apply(table_pts)), moved_plane(plane, T), None,
                                 t_traj.with_poses([T @ p for p in t_traj.poses]))
        assert np.array_equal(a_table, b.indices)
        b = select_human_head(PointCloud(T.apply(bust)), h_traj.with_poses([T @ p for p in h_traj.poses]), k=150)
        assert np.array_equal(a_human, b.indices)


# --- 6. RANSAC -------------------------------------------------------------------------

@criterion(6, "RANSAC with 30% outliers: normal within 0.5 deg, offset 2 mm, recall >= 99%, 20 seeds")
def test_ransac_plane(record_property):
    worst = [0.0, 0.0, 1.0]
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n_in, n_out = 1400, 600
        inl = np.c_[rng.uniform(0, 1, (n_in, 2)), np.full(n_in, 0.5)]
        out = rng.uniform(0, 1, (n_out, 3))
        plane, idx = ransac_plane(np.vstack([inl, out]), 0.005, seed=seed)
        p = plane if plane.c > 0 else plane.flipped()
        angle = np.degrees(np.arccos(min(1.0, p.c)))
        offset = abs(p.d + 0.5)
        recall = np.isin(np.arange(n_in), idx).mean()
        worst = [max(worst[0], angle), max(worst[1], offset), min(worst[2], recall)]
        assert angle <= 0.5 and offset <= 0.002 and recall >= 0.99
    record_property("measured", f"worst {worst[0]:.3f} deg, {1000 * worst[1]:.2f} mm, recall {worst[2]:.4f}")


# --- 7. Hausdorff tool -----------------------------------------------------------------

def check_convention(rep):
    for k in ("mean", "max", "rms"):
        assert rep.bbox_pct[k] == pytest.approx(100.0 * getattr(rep.two_sided, k) / rep.bbox_diagonal, rel=1e-12)


@criterion(7, "distance tool equals exhaustive oracle, symmetric, translation-equivariant, percent-of-diagonal convention")
def test_distance_tool(record_property):
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(4):
        mesh = random_mesh(rng, 200, 150)
        pts = rng.uniform(-0.8, 0.8, (300, 3))
        worst = max(worst, np.abs(point_to_mesh_distances(pts, mesh) - exhaustive(pts, mesh)).max())
    sphere = sphere_mesh((0, 0, 0), 0.2, 8, 13)
    assert len(sphere.faces) <= 200
    pts = rng.normal(0, 0.3, (300, 3))
    worst = max(worst, np.abs(point_to_mesh_distances(pts, sphere) - exhaustive(pts, sphere)).max())
    assert worst <= 1e-12

    a, b = random_mesh(rng, 60), random_mesh(rng, 80)
    ab, ba = hausdorff_report(a, b), hausdorff_report(b, a)
    shift = rng.uniform(-2, 2, 3)
    moved = hausdorff_report(TriangleMesh(a.vertices + shift, a.faces), TriangleMesh(b.vertices + shift, b.faces))
    for k in ("mean", "max", "rms"):
        assert abs(getattr(ab.two_sided, k) - getattr(ba.two_sided, k)) <= 1e-12
        assert abs(getattr(ab.two_sided, k) - getattr(moved.two_sided, k)) <= 1e-12

    planes = hausdorff_report(quad_mesh((0, 0, 0), 0.5, 0.5, n=3), quad_mesh((0, 0, 0.1), 0.5, 0.5, n=3))
    for s in (planes.forward, planes.backward, planes.two_sided):
        assert s.mean == pytest.approx(10.0, abs=1e-12)
        assert s.max == pytest.approx(10.0, abs=1e-12)
        assert s.rms == pytest.approx(10.0, abs=1e-12)

    # mean, max and RMS of the FastSCAN comparison scan: cm against percent of bbox diagonal
    diags = [implied_diagonal(0.1868, 0.4283), implied_diagonal(0.6177, 1.4168), implied_diagonal(0.2257, 0.5177)]
    assert np.allclose(diags, 43.6, atol=0.05)
    head = head_mesh(30, 60)
    for rep in (ab, ba, moved, planes, hausdorff_report(head, TriangleMesh(head.vertices * 1.01, head.faces))):
        check_convention(rep)
    record_property("measured", f"max oracle gap {worst:.1e}, FastSCAN diagonal {np.mean(diags):.2f} cm")


# --- 8. scaling --------------------------------------------------------------------------

@criterion(8, "d_loop = 2.000 m, sf = 0.1270, fits 254x254x305 mm, ratios within 1e-9")
def test_scaling(record_property):
    traj = circular_trajectory((0, 0, 0.1), 1.0, 0.3, 120)
    d_loop = compute_loop_diameter(traj)
    sf = scale_factor(PrinterVolume().base_length, d_loop)
    assert round(d_loop, 3) == 2.000 and abs(d_loop - 2.0) < 1e-9
    assert round(sf, 4) == 0.1270
    head = head_mesh(40, 80)
    out, sf2 = fit_to_printer(head, traj)
    assert sf2 == sf
    lo, hi = out.bounds()
    assert np.all(lo >= -1e-12) and np.all(hi <= PRINTER + 1e-12)
    rng = np.random.default_rng(0)
    i, j = rng.choice(len(head.vertices), (2, 500))
    keep = i != j
    i, j = i[keep], j[keep]
    ratio = np.linalg.norm(out.vertices[i] - out.vertices[j], axis=1) / np.linalg.norm(head.vertices[i] - head.vertices[j], axis=1)
    dev = np.abs(ratio / sf - 1.0).max()
    assert dev <= 1e-9
    assert scale_mesh(head, sf).bounds()[1][2] <= PRINTER[2]
    record_property("measured", f"d_loop {d_loop:.6f} m, sf {sf:.6f}, ratio dev {dev:.1e}")


# --- 9. formats ----------------------------------------------------------------------------

@criterion(9, "one-triangle STL is 134 bytes; STL bitwise and PLY printed-precision round trips")
def test_format_fidelity(tmp_path):
    tri = TriangleMesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]), np.array([[0, 1, 2]]))
    export_stl(tri, tmp_path / "t.stl")
    data = (tmp_path / "t.stl").read_bytes()
    assert len(data) == 134
    assert struct.unpack_from("<I", data, 80)[0] == 1

    head = TriangleMesh(head_mesh(30, 60).vertices + [0.0123456789, -0.3, 1.7], head_mesh(30, 60).faces)
    export_stl(head, tmp_path / "h.stl")
    back = read_stl(tmp_path / "h.stl")
    assert np.array_equal(back.triangles(), head.triangles().astype(np.float32).astype(np.float64))

    export_ply(head, tmp_path / "h.ply")
    back = read_ply(tmp_path / "h.ply")
    printed = np.array([[float(f"{x:.9g}") for x in row] for row in head.vertices])
    assert np.array_equal(back.vertices, printed)
    assert np.array_equal(back.faces, head.faces)


# --- 10 and 11. determinism and throughput ---------------------------------------------------

def throughput_config(out):
    return config_from_dict({
        "input": "builtin:head_on_table",
        "output_dir": str(out),
        "seed": 5,
        "trajectory": {"n_frames": 60},
        "camera": {"width": 128, "height": 128, "hfov_deg": 34.0},
        "tsdf": {"resolution": 128, "extent": 0.6},
    })


@pytest.fixture(scope="module")
def twin_runs(tmp_path_factory):
    a, b = tmp_path_factory.mktemp("run_a"), tmp_path_factory.mktemp("run_b")
    run_pipeline(throughput_config(a))
    run_pipeline(throughput_config(b))
    return a, b


@criterion(10, "same config and seed give byte-identical STL and JSON outputs")
def test_determinism(twin_runs):
    a, b = twin_runs
    names = sorted(p.name for p in a.iterdir() if p.suffix in (".stl", ".json"))
    assert {"head_print.stl", "report.json", "scale.json", "manifest.json"} <= set(names)
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


@criterion(11, "per-stage timings logged; >= 2 frames/s at 128x128 / 128^3")
def test_throughput(twin_runs, record_property):
    a, _ = twin_runs
    with open(a / "timings.csv") as fh:
        rows = {r["stage"]: r for r in csv.DictReader(fh)}
    assert set(rows) == {"simulate", "reconstruct", "select", "scale", "export", "evaluate"}
    seconds = float(rows["reconstruct"]["seconds"])
    fps = 60 / seconds
    record_property("measured", f"{fps:.1f} frames/s over the whole reconstruct stage")
    assert fps >= 2.0
