"""Chamfer distance / chamfer normal angle and camera-rig normalization."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from .geometry import SdfField, TriangleMesh, VoxelGrid, extract_surface, sample_surface
from .render import CameraPose

SAMPLE_COUNT = 10000


class EmptySet(ValueError):
    pass


class DegenerateRig(ValueError):
    pass


@dataclass(frozen=True)
class EvalReport:
    """Summed (not averaged) metrics over both sample sets; ``cdn`` in degrees."""

    cd: float
    cdn: float
    sample_count: int
    seed: int

    def csv_row(self, obj: str = "", views: int | str = "") -> str:
        return f"{obj},{views},{self.cd:.6f},{self.cdn:.6f},{self.seed}"


CSV_HEADER = "object,views,CD,CDN,seed"


def normal_angle_deg(n1, n2):
    """Unsigned angle between normal lines (orientation ignored), in degrees."""
    cross = np.linalg.norm(np.cross(n1, n2), axis=-1)
    dot = np.abs(np.sum(n1 * n2, axis=-1))
    return np.degrees(np.arctan2(cross, dot))


def _one_way(src_p, src_n, dst_p, dst_n, tree=None):
    tree = tree or cKDTree(dst_p)
    dist, j = tree.query(src_p)
    return dist.sum(), normal_angle_deg(src_n, dst_n[j]).sum()


def chamfer(a, b, seed: int = 0) -> EvalReport:
    """``a`` and ``b`` are ``(points, normals)`` pairs."""
    pa, na = (np.asarray(v, float) for v in a)
    pb, nb = (np.asarray(v, float) for v in b)
    if len(pa) == 0 or len(pb) == 0:
        raise EmptySet("chamfer needs two non-empty sample sets")
    d_ab, n_ab = _one_way(pa, na, pb, nb)
    d_ba, n_ba = _one_way(pb, nb, pa, na)
    # accumulate in a fixed order so chamfer(a, b) == chamfer(b, a) bitwise
    cd = float(sum(sorted([d_ab, d_ba])))
    cdn = float(sum(sorted([n_ab, n_ba])))
    return EvalReport(cd=cd, cdn=cdn, sample_count=len(pa), seed=seed)


def chamfer_bruteforce(a, b) -> tuple[float, float]:
    """O(n*m) reference used by the tests."""
    pa, na = a
    pb, nb = b
    dist = np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=-1)
    i_ab = dist.argmin(axis=1)
    i_ba = dist.argmin(axis=0)
    cd = dist.min(axis=1).sum() + dist.min(axis=0).sum()
    cdn = normal_angle_deg(na, nb[i_ab]).sum() + normal_angle_deg(nb, na[i_ba]).sum()
    return float(cd), float(cdn)


def surface_samples(shape, count: int = SAMPLE_COUNT, seed: int = 0, resolution: int = 128):
    """Sample points+normals from a mesh, grid, or analytic field."""
    if isinstance(shape, TriangleMesh):
        mesh = shape
    elif isinstance(shape, VoxelGrid):
        mesh = extract_surface(shape)
    elif isinstance(shape, SdfField):
        mesh = extract_surface(VoxelGrid.from_field(shape, resolution))
    else:
        raise TypeError(f"cannot sample {type(shape).__name__}")
    return sample_surface(mesh, count, seed)


def evaluate(reconstructed, ground_truth, count: int = SAMPLE_COUNT, seed: int = 0) -> EvalReport:
    # same seed on both sides: identical shapes give identical samples and CD = 0
    a = surface_samples(reconstructed, count, seed)
    b = surface_samples(ground_truth, count, seed)
    return chamfer(a, b, seed)


# ---------------------------------------------------------------------------
# Pose normalization


@dataclass(frozen=True)
class Similarity:
    """``x' = scale * (x - center)``."""

    scale: float
    center: np.ndarray

    def apply_point(self, x):
        return self.scale * (np.asarray(x, float) - self.center)

    def inverse_point(self, x):
        return np.asarray(x, float) / self.scale + self.center

    def to_dict(self):
        return {"scale": float(self.scale), "center": [float(c) for c in self.center]}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["scale"]), np.asarray(d["center"], float))

    @classmethod
    def identity(cls):
        return cls(1.0, np.zeros(3))


def rig_center(cameras: list[CameraPose], cond_limit: float = 1e8) -> np.ndarray:
    """Least-squares point closest to all optical axes."""
    a = np.zeros((3, 3))
    rhs = np.zeros(3)
    for cam in cameras:
        p = np.eye(3) - np.outer(cam.forward, cam.forward)
        a += p
        rhs += p @ cam.center
    if np.linalg.cond(a) > cond_limit:
        raise DegenerateRig("optical axes are (nearly) collinear")
    return np.linalg.solve(a, rhs)


def normalize_poses(cameras: list[CameraPose], camera_radius: float = 3.0):
    """Translate/scale the rig so its axes meet at the origin and the farthest
    camera sits at ``camera_radius``; the object is then assumed inside the
    unit sphere.  Returns ``(cameras', transform)``.
    """
    if len(cameras) < 2:
        raise DegenerateRig("need at least two cameras")
    c = rig_center(cameras)
    far = max(np.linalg.norm(cam.center - c) for cam in cameras)
    tr = Similarity(camera_radius / far, c)
    return [apply_to_camera(cam, tr) for cam in cameras], tr


def apply_to_camera(cam: CameraPose, tr: Similarity) -> CameraPose:
    return replace(cam, center=tr.apply_point(cam.center))


def invert_on_camera(cam: CameraPose, tr: Similarity) -> CameraPose:
    return replace(cam, center=tr.inverse_point(cam.center))
