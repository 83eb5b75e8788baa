import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from headscan.geometry import PointCloud
from headscan.scanner import circular_trajectory
from headscan.segmentation import (
    Plane,
    Prism,
    SelectionError,
    convex_hull_2d,
    default_k,
    plane_align_transform,
    polygon_area,
    ransac_plane,
    select_head_on_table,
    select_human_head,
)

from helpers import random_transform
from seg_oracle import bust_points, human_oracle, in_plane_basis, moved_plane, table_oracle, table_scene


# --- RANSAC -----------------------------------------------------------------

def test_ransac_axis_plane():
    rng = np.random.default_rng(0)
    pts = np.c_[rng.uniform(-1, 1, (200, 2)), np.zeros(200)]
    plane, inliers = ransac_plane(pts, 0.005, 100, seed=1)
    assert abs(abs(plane.c) - 1.0) < 1e-12 and abs(plane.d) < 1e-12
    assert len(inliers) == 200


@pytest.mark.parametrize("seed", range(5))
def test_ransac_plane_with_outliers(seed):
    rng = np.random.default_rng(seed)
    n_in, n_out = 1400, 600
    inl = np.c_[rng.uniform(0, 1, (n_in, 2)), np.full(n_in, 0.5)]
    out = rng.uniform(0, 1, (n_out, 3))
    pts = np.vstack([inl, out])
    plane, idx = ransac_plane(pts, 0.005, 500, seed=seed)
    p = plane if plane.c > 0 else plane.flipped()
    assert np.degrees(np.arccos(min(1.0, p.c))) < 0.5
    assert abs(p.d + 0.5) < 0.002
    assert np.isin(np.arange(n_in), idx).mean() >= 0.99


def test_ransac_is_deterministic():
    rng = np.random.default_rng(4)
    pts = rng.uniform(0, 1, (300, 3))
    a = ransac_plane(pts, 0.01, 50, seed=9)
    b = ransac_plane(pts, 0.01, 50, seed=9)
    assert a[0] == b[0] and np.array_equal(a[1], b[1])


def test_ransac_needs_three_points():
    with pytest.raises(ValueError):
        ransac_plane(np.zeros((2, 3)), 0.01)


def test_ransac_collinear_input_errors():
    pts = np.c_[np.linspace(0, 1, 20), np.zeros(20), np.zeros(20)]
    with pytest.raises(ValueError, match="collinear"):
        ransac_plane(pts, 0.01, 20)


# --- alignment and hull -------------------------------------------------------

def test_align_identity_for_z_normal():
    T = plane_align_transform(Plane(0, 0, 1, -0.3))
    assert np.allclose(T.rotation, np.eye(3), rtol=0, atol=1e-15)
    assert np.all(T.translation == 0)


def test_align_x_normal():
    T = plane_align_transform(Plane(1, 0, 0, 0))
    assert np.allclose(T.apply_vectors([[1.0, 0, 0]])[0], [0, 0, 1], rtol=0, atol=1e-9)
    assert T.rotation_angle() == pytest.approx(np.pi / 2, abs=1e-12)


def test_aligned_inliers_are_flat():
    rng = np.random.default_rng(2)
    n = np.array([0.3, -0.5, 0.8])
    n /= np.linalg.norm(n)
    u, v = in_plane_basis(n)
    pts = rng.uniform(-1, 1, (500, 1)) * u + rng.uniform(-1, 1, (500, 1)) * v + 0.2 * n
    pts += rng.normal(0, 0.001, (500, 1)) * n
    plane, idx = ransac_plane(pts, 0.005, 200, seed=0)
    z = plane_align_transform(plane).apply(pts[idx])[:, 2]
    assert z.std() <= 0.005


@given(st.integers(0, 2**31))
def test_align_preserves_distances(seed):
    rng = np.random.default_rng(seed)
    n = rng.normal(size=3)
    T = plane_align_transform(Plane(*n, rng.normal()))
    p = rng.normal(size=(20, 3))
    q = T.apply(p)
    d0 = np.linalg.norm(p[:, None] - p[None], axis=2)
    d1 = np.linalg.norm(q[:, None] - q[None], axis=2)
    assert np.abs(d0 - d1).max() < 1e-9
    assert np.allclose(T.apply_vectors(n[None] / np.linalg.norm(n))[0], [0, 0, 1], atol=1e-9)


def test_hull_drops_interior_point():
    hull = convex_hull_2d([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]])
    assert sorted(map(tuple, hull)) == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert polygon_area(hull) == pytest.approx(1.0, abs=1e-15)


def test_hull_of_circle_keeps_all_points_in_order():
    a = np.linspace(0, 2 * np.pi, 17)[:-1]
    pts = np.c_[np.cos(a), np.sin(a)]
    hull = convex_hull_2d(pts[::-1])
    assert len(hull) == 16
    ang = np.unwrap(np.arctan2(hull[:, 1], hull[:, 0]))
    assert np.all(np.diff(ang) > 0)


def test_hull_drops_collinear_boundary_points():
    hull = convex_hull_2d([[0, 0], [0.5, 0], [1, 0], [1, 1], [0, 1]])
    assert len(hull) == 4


def test_hull_guards():
    with pytest.raises(ValueError):
        convex_hull_2d([[0, 0], [1, 1]])
    with pytest.raises(ValueError):
        convex_hull_2d([[0, 0], [1, 1], [2, 2]])


def test_prism_guards():
    with pytest.raises(ValueError):
        Prism(np.array([[0, 0], [0, 1], [1, 1], [1, 0]]), 0.0, 1.0)  # clockwise
    with pytest.raises(ValueError):
        Prism(np.array([[0, 0], [1, 0], [1, 1]]), 1.0, 1.0)


# --- table selection ----------------------------------------------------------

def test_table_selection_returns_exactly_the_ball():
    rng = np.random.default_rng(0)
    ball, table = table_scene(rng)
    full = PointCloud(np.vstack([ball, table]))
    traj = circular_trajectory((0, 0, 0), 1.0, 0.3, 36)
    sel = select_head_on_table(full, Plane(0, 0, 1, 0), None, traj)
    assert np.array_equal(sel.indices, np.arange(len(ball)))


def test_table_selection_excludes_point_outside_loop():
    rng = np.random.default_rng(1)
    ball, table = table_scene(rng, 500, 500)
    stray = np.array([[1.5, 0.0, 0.1]])
    full = PointCloud(np.vstack([ball, table, stray]))
    traj = circular_trajectory((0, 0, 0), 1.0, 0.3, 36)
    sel = select_head_on_table(full, Plane(0, 0, 1, 0), None, traj)
    assert len(ball) + len(table) not in sel.indices
    assert len(sel.indices) == len(ball)


def test_table_selection_with_nothing_above_errors():
    rng = np.random.default_rng(2)
    _, table = table_scene(rng, 0, 400)
    traj = circular_trajectory((0, 0, 0), 1.0, 0.3, 12)
    with pytest.raises(SelectionError):
        select_head_on_table(PointCloud(table), Plane(0, 0, 1, 0), None, traj)


def test_table_plane_sign_does_not_matter():
    rng = np.random.default_rng(3)
    ball, table = table_scene(rng, 400, 400)
    full = PointCloud(np.vstack([ball, table]))
    traj = circular_trajectory((0, 0, 0), 1.0, 0.3, 12)
    a = select_head_on_table(full, Plane(0, 0, 1, 0), None, traj)
    b = select_head_on_table(full, Plane(0, 0, -1, 0), None, traj)
    assert np.array_equal(a.indices, b.indices)


@pytest.mark.parametrize("seed", range(3))
def test_table_selection_equals_oracle(seed):
    rng = np.random.default_rng(seed)
    ball, table = table_scene(rng, 2000, 3000)
    clutter = rng.uniform([-1.4, -1.4, -0.2], [1.4, 1.4, 0.5], (2000, 3))
    pts = np.vstack([ball, table, clutter])
    traj = circular_trajectory((0.05, -0.02, 0.0), 0.9, 0.35, 24)
    plane, _ = ransac_plane(pts, 0.005, 300, seed=seed)
    sel = select_head_on_table(PointCloud(pts), plane, None, traj)
    ref = table_oracle(pts, plane, traj.positions(), 0.005)
    assert np.array_equal(sel.indices, ref)


# --- human selection ----------------------------------------------------------

def test_bust_selection_keeps_head_and_bounded_torso():
    rng = np.random.default_rng(0)
    head, body = bust_points(rng)
    pts = np.vstack([head, body])
    traj = circular_trajectory((0, 0, 1.6), 1.0, 0.0, 36)
    offset = 0.3
    sel = select_human_head(PointCloud(pts), traj, offset_head=offset)
    assert np.isin(np.arange(len(head)), sel.indices).all()
    z = sel.transform.apply(pts[sel.indices])[:, 2]
    assert z.min() >= -sel.plane.d - offset
    assert np.array_equal(sel.indices, human_oracle(pts, traj.positions(), default_k(len(pts)), offset))


def test_bust_selection_above_head():
    rng = np.random.default_rng(5)
    head, body = bust_points(rng)
    pts = np.vstack([head, body])
    traj = circular_trajectory((0, 0, 1.6), 0.8, 0.4, 36)
    sel = select_human_head(PointCloud(pts), traj, k=200, offset_head=0.45)
    assert np.isin(np.arange(len(head)), sel.indices).all()
    # the virtual plane sits at the centroid of the fitted cap, about 1 cm under the top
    assert pts[sel.indices][:, 2].min() >= 1.6 + 0.1 - 0.45 - 0.02
    assert np.array_equal(sel.indices, human_oracle(pts, traj.positions(), 200, 0.45))


def test_zero_offset_keeps_nothing_below_virtual_plane():
    rng = np.random.default_rng(1)
    head, body = bust_points(rng)
    pts = np.vstack([head, body])
    traj = circular_trajectory((0, 0, 1.6), 0.8, 0.4, 36)
    sel = select_human_head(PointCloud(pts), traj, k=150, offset_head=0.0)
    z = sel.transform.apply(pts)[:, 2]
    plane_z = -sel.plane.d
    assert np.all(z[sel.indices] >= plane_z)
    below = np.setdiff1d(np.arange(len(pts)), sel.indices)
    assert np.all(z[below] < plane_z)


def test_k_equal_to_all_points_still_terminates():
    rng = np.random.default_rng(2)
    head, body = bust_points(rng, 500, 1000)
    pts = np.vstack([head, body])
    traj = circular_trajectory((0, 0, 1.6), 1.0, 0.3, 24)
    sel = select_human_head(PointCloud(pts), traj, k=len(pts))
    assert len(sel.indices) > 0


def test_human_selection_guards():
    traj = circular_trajectory((0, 0, 1.6), 1.0, 0.3, 8)
    with pytest.raises(SelectionError):
        select_human_head(PointCloud(np.zeros((0, 3))), traj)
    with pytest.raises(ValueError):
        select_human_head(PointCloud(np.random.default_rng(0).normal(size=(50, 3))), traj, k=2)


def test_default_k():
    assert default_k(1000) == 100
    assert default_k(100000) == 500


# --- rigid invariance -----------------------------------------------------------

@pytest.mark.parametrize("seed", range(10))
def test_selection_is_rigidly_invariant(seed):
    rng = np.random.default_rng(100 + seed)
    ball, table = table_scene(rng, 800, 800)
    pts = np.vstack([ball, table])
    traj = circular_trajectory((0, 0, 0), 1.0, 0.3, 24)
    T = random_transform(rng, 180.0, 2.0)
    moved = traj.with_poses([T @ p for p in traj.poses])
    plane = Plane(0, 0, 1, 0)
    a = select_head_on_table(PointCloud(pts), plane, None, traj)
    b = select_head_on_table(PointCloud(T.apply(pts)), moved_plane(plane, T), None, moved)
    assert np.array_equal(a.indices, b.indices)

    head, body = bust_points(rng, 600, 1200)
    pts = np.vstack([head, body])
    traj = circular_trajectory((0, 0, 1.6), 0.8, 0.4, 24)
    moved = traj.with_poses([T @ p for p in traj.poses])
    a = select_human_head(PointCloud(pts), traj, k=120)
    b = select_human_head(PointCloud(T.apply(pts)), moved, k=120)
    assert np.array_equal(a.indices, b.indices)
