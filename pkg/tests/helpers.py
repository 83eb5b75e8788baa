import numpy as np

from headscan.geometry import PointCloud, RigidTransform
from headscan.scenes import head_mesh


def sample_with_normals(mesh, n, seed=0):
    """Area-uniform surface points carrying their face normals."""
    rng = np.random.default_rng(seed)
    areas = mesh.face_areas()
    f = rng.choice(len(areas), size=n, p=areas / areas.sum())
    u, v = rng.random(n), rng.random(n)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    t = mesh.triangles()[f]
    pts = t[:, 0] + u[:, None] * (t[:, 1] - t[:, 0]) + v[:, None] * (t[:, 2] - t[:, 0])
    return PointCloud(pts, mesh.face_normals()[f])


def head_cloud(n=2000, seed=0):
    return sample_with_normals(head_mesh(60, 120), n, seed)


def random_transform(rng, max_deg, max_trans):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.radians(rng.uniform(0, max_deg))
    d = rng.normal(size=3)
    d *= rng.uniform(0, max_trans) / np.linalg.norm(d)
    return RigidTransform.from_rotvec(axis * angle, d)


def pose_error(a, b):
    """(rotation degrees, translation meters) between two transforms."""
    rel = a.inverse() @ b
    return np.degrees(rel.rotation_angle()), float(np.linalg.norm(a.translation - b.translation))
