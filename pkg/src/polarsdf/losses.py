"""Reconstruction losses on a :class:`VoxelGrid` with exact gradients.

Each loss returns ``(value, grad)`` where ``grad`` has the shape of the grid
values.  Gradients are scattered with ``np.bincount`` so accumulation does not
depend on ray order.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from . import polarimetry as pol
from .geometry import (
    COARSE_STEPS,
    SECANT_TOL,
    Intersection,
    VoxelGrid,
    coarse_samples,
    first_crossing,
    secant_intersect,
)
from .render import specular_aolp


@dataclass
class LossConfig:
    silhouette_weight: float = 100.0
    lambda_sdf: float = 0.1
    lambda_pol: float = 0.4
    epsilon: float = np.pi / 6
    sharpness: float = 50.0
    sharpness_growth: float = 2.0
    sharpness_interval: int = 200
    rays_per_iteration: int = 20480
    epochs: int = 1000
    warmup_epochs: int = 100
    learning_rate: float = 1e-4
    betas: tuple = (0.9, 0.999)
    value_clamp: float = 2.0
    use_reflection_weight: bool = True
    smoothing: float = 0.0

    def __post_init__(self):
        if min(self.lambda_sdf, self.lambda_pol, self.sharpness, self.learning_rate) < 0:
            raise ValueError("loss weights and rates must be non-negative")
        if self.smoothing < 0:
            raise ValueError("smoothing must be non-negative")
        if not 0 < self.epsilon <= np.pi / 2:
            raise ValueError("epsilon must lie in (0, pi/2]")

    def sharpness_at(self, epoch: int) -> float:
        return self.sharpness * self.sharpness_growth ** (epoch // self.sharpness_interval)

    def lambda_pol_at(self, epoch: int) -> float:
        return 0.0 if epoch < self.warmup_epochs else self.lambda_pol


@dataclass
class RayBatch:
    origins: np.ndarray
    directions: np.ndarray
    t_near: np.ndarray
    t_far: np.ndarray
    mask: np.ndarray
    aolp: np.ndarray
    up: np.ndarray
    weight: Optional[np.ndarray] = None
    view_ids: Optional[np.ndarray] = None
    pixel_ids: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.origins)

    def take(self, rows) -> "RayBatch":
        pick = lambda a: None if a is None else a[rows]  # noqa: E731
        return RayBatch(*(pick(getattr(self, f)) for f in self.__dataclass_fields__))


@dataclass
class March:
    """Coarse samples of the field along every ray of a batch."""

    ts: np.ndarray
    points: np.ndarray
    values: np.ndarray
    hit: np.ndarray = dc_field(init=False)

    def __post_init__(self):
        _, hit = first_crossing(self.values)
        valid = self.ts[:, -1] > self.ts[:, 0]
        self.hit = hit & valid


def march(grid: VoxelGrid, batch: RayBatch, steps: int = COARSE_STEPS) -> March:
    ts = coarse_samples(batch.t_near, batch.t_far, steps)
    pts = batch.origins[:, None, :] + ts[..., None] * batch.directions[:, None, :]
    return March(ts, pts, grid.value(pts))


def _scatter(grid: VoxelGrid, idx, coef) -> np.ndarray:
    g = np.bincount(idx.ravel(), weights=coef.ravel(), minlength=grid.values.size)
    return g.reshape(grid.values.shape)


def _softplus(z):
    return np.logaddexp(0.0, z)


def loss_silhouette(grid: VoxelGrid, batch: RayBatch, sharpness: float, mr: March = None):
    """BCE between soft occupancy and the mask, on rays that disagree with it.

    Soft occupancy is ``sigmoid(sharpness * max_t f)`` over the coarse samples.
    The sum is scaled by ``1 / (sharpness * len(batch))``.
    """
    if mr is None:
        mr = march(grid, batch)
    n = max(len(batch), 1)
    valid = mr.ts[:, -1] > mr.ts[:, 0]
    disagree = valid & (batch.mask != mr.hit)
    rows = np.flatnonzero(disagree)
    if rows.size == 0:
        return 0.0, np.zeros_like(grid.values)
    k = np.argmax(mr.values[rows], axis=1)
    m = mr.values[rows, k]
    x = mr.points[rows, k]
    y = batch.mask[rows].astype(float)
    z = sharpness * m
    bce = np.where(y > 0, _softplus(-z), _softplus(z))
    loss = bce.sum() / (sharpness * n)
    dm = (1.0 / (1.0 + np.exp(-z)) - y) / n
    idx, w = grid.corners(x)
    return float(loss), _scatter(grid, idx, w * dm[:, None])


def loss_eikonal(grid: VoxelGrid, points):
    """Mean of ``(|grad f| - 1)^2`` over ``points``."""
    points = np.asarray(points, float)
    if len(points) == 0:
        return 0.0, np.zeros_like(grid.values)
    idx, _, dw = grid.corners(points, derivatives=1)
    g = np.einsum("pc,pcd->pd", grid.values.ravel()[idx], dw)
    norm = np.linalg.norm(g, axis=-1)
    r = norm - 1.0
    loss = np.mean(r**2)
    unit = g / np.where(norm > 0, norm, 1.0)[:, None]
    coef = (2.0 / len(points)) * r[:, None] * np.einsum("pd,pcd->pc", unit, dw)
    return float(loss), _scatter(grid, idx, coef)


def surface_hits(grid: VoxelGrid, batch: RayBatch, mr: March = None, tol: float = SECANT_TOL) -> Intersection:
    if mr is None:
        mr = march(grid, batch)
    return secant_intersect(
        grid,
        batch.origins,
        batch.directions,
        batch.t_near,
        batch.t_far,
        want_sign_at_start=-1,
        tol=tol,
        max_iter=64 if tol < SECANT_TOL else 16,
        coarse_values=mr.values,
    )


def loss_polarization(
    grid: VoxelGrid,
    batch: RayBatch,
    epsilon: float,
    mr: March = None,
    hits: Intersection = None,
    tol: float = SECANT_TOL,
):
    """Reflection-weighted, clipped AoLP loss over in-mask rays hitting the surface.

    ``batch.weight`` holds the per-ray reflection percentage (treated as a
    constant).  The rendered AoLP depends on the grid through the intersection
    point and the normal there; its gradient uses implicit differentiation of
    ``f(o + t d) = 0``.
    """
    if mr is None:
        mr = march(grid, batch)
    if hits is None:
        hits = surface_hits(grid, batch, mr, tol)
    rows = np.flatnonzero(hits.hit & batch.mask)
    if rows.size == 0:
        return 0.0, np.zeros_like(grid.values)
    d = batch.directions[rows]
    x = hits.point[rows]
    up = batch.up[rows]
    w_p = np.ones(rows.size) if batch.weight is None else batch.weight[rows]

    idx, wt, dw, ddw = grid.corners(x, derivatives=2)
    v = grid.values.ravel()[idx]
    g = np.einsum("pc,pcd->pd", v, dw)
    hess = np.einsum("pc,pcab->pab", v, ddw)

    psi_hat = specular_aolp(d, -g, up)
    diff = np.mod(psi_hat - batch.aolp[rows], np.pi)
    dist = np.minimum(diff, np.pi - diff)
    active = dist <= epsilon
    n_p = rows.size
    loss = np.sum(np.where(active, w_p * dist, 0.0)) / n_p

    # d psi / d g for psi = atan2(u.y, u.x), u = g x v_o
    v_o = -d
    xa = pol.camera_x_axis(v_o, up)
    ya = np.cross(v_o, xa)
    u = np.cross(g, v_o)
    a = np.sum(u * xa, -1)
    b = np.sum(u * ya, -1)
    q = np.cross(v_o, a[:, None] * ya - b[:, None] * xa) / np.maximum(a * a + b * b, 1e-30)[:, None]
    gd = np.sum(g * d, -1)
    gd = np.where(np.abs(gd) > 1e-12, gd, 1e-12)
    qhd = np.einsum("pa,pab,pb->p", q, hess, d)
    dpsi = np.einsum("pd,pcd->pc", q, dw) - (qhd / gd)[:, None] * wt

    sign = np.where(diff < np.pi / 2, 1.0, -1.0)
    dl = np.where(active, w_p * sign, 0.0) / n_p
    return float(loss), _scatter(grid, idx, dl[:, None] * dpsi)
