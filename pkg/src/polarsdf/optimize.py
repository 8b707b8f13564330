"""Grid optimization loop: silhouette + Eikonal + weighted polarization losses."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.ndimage import gaussian_filter

from .geometry import VoxelGrid, unit_sphere_clip
from .losses import (
    LossConfig,
    RayBatch,
    loss_eikonal,
    loss_polarization,
    loss_silhouette,
    march,
    surface_hits,
)
from .render import CameraPose, Scene, trace_reflection
from .render import subset_hits

log = logging.getLogger(__name__)


class Diverged(RuntimeError):
    pass


@dataclass
class ViewData:
    """What the optimizer needs from one captured view."""

    camera: CameraPose
    mask: np.ndarray
    aolp: np.ndarray


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, values):
        return cls(np.zeros_like(values), np.zeros_like(values), 0)


@dataclass
class OptimizeResult:
    field: VoxelGrid
    trace: list = dc_field(default_factory=list)
    diverged: bool = False
    state: AdamState = None
    offset: np.ndarray = None


def collect_rays(views: list[ViewData]) -> RayBatch:
    """All pixel rays of all views that pass through the unit sphere."""
    parts = []
    for k, view in enumerate(views):
        o, d = view.camera.pixel_rays()
        te, tx, ok = unit_sphere_clip(o, d)
        rows = np.flatnonzero(ok)
        parts.append(
            RayBatch(
                origins=o[rows],
                directions=d[rows],
                t_near=te[rows],
                t_far=tx[rows],
                mask=np.asarray(view.mask).ravel()[rows] > 0.5,
                aolp=np.asarray(view.aolp, float).ravel()[rows],
                up=np.broadcast_to(view.camera.up, (rows.size, 3)).copy(),
                view_ids=np.full(rows.size, k),
                pixel_ids=rows,
            )
        )
    return RayBatch(
        *(np.concatenate([getattr(p, f) for p in parts]) if getattr(parts[0], f) is not None else None
          for f in RayBatch.__dataclass_fields__)
    )


def uniform_ball(rng: np.random.Generator, count: int) -> np.ndarray:
    v = rng.normal(size=(count, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * rng.random((count, 1)) ** (1.0 / 3.0)


def adam_step(values, grad, state: AdamState, cfg: LossConfig):
    b1, b2 = cfg.betas
    state.step += 1
    state.m *= b1
    state.m += (1 - b1) * grad
    state.v *= b2
    state.v += (1 - b2) * grad * grad
    m_hat = state.m / (1 - b1**state.step)
    v_hat = state.v / (1 - b2**state.step)
    values -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + 1e-8)


def epoch_losses(grid: VoxelGrid, batch: RayBatch, scene: Scene, cfg: LossConfig, epoch: int, rng_eik):
    """Loss terms and the combined gradient for one batch."""
    mr = march(grid, batch)
    l_sil, g_sil = loss_silhouette(grid, batch, cfg.sharpness_at(epoch), mr)
    l_sil, g_sil = cfg.silhouette_weight * l_sil, cfg.silhouette_weight * g_sil
    hits = surface_hits(grid, batch, mr)
    on_surface = np.flatnonzero(hits.hit & batch.mask)

    pts = hits.point[on_surface]
    eik_pts = np.concatenate([pts, uniform_ball(rng_eik, max(len(pts), 1))])
    l_sdf, g_sdf = loss_eikonal(grid, eik_pts)

    lam_pol = cfg.lambda_pol_at(epoch)
    l_pol, g_pol = 0.0, 0.0
    if lam_pol > 0 and on_surface.size:
        weight = np.ones(len(batch))
        if cfg.use_reflection_weight:
            traced = trace_reflection(
                Scene(grid, scene.eta_glass, scene.eta_air, scene.illumination, scene.tir_intensity),
                subset_hits(hits, on_surface),
            )
            weight[on_surface] = traced.w
        batch.weight = weight
        l_pol, g_pol = loss_polarization(grid, batch, cfg.epsilon, mr, hits)
    total = l_sil + cfg.lambda_sdf * l_sdf + lam_pol * l_pol
    grad = g_sil + cfg.lambda_sdf * g_sdf + lam_pol * g_pol
    return (l_sil, l_sdf, l_pol, total), grad


def optimize(
    grid: VoxelGrid,
    views: list[ViewData],
    scene: Scene,
    cfg: LossConfig,
    seed: int = 0,
    checkpoint_path=None,
    checkpoint_every: int = 0,
    callback=None,
) -> OptimizeResult:
    """Optimize a copy of ``grid`` against ``views``.

    One epoch draws ``cfg.rays_per_iteration`` rays across all views and takes
    a single Adam step.  The optimized parameters are an offset grid added to
    the initial field.  With ``cfg.smoothing > 0`` the offset is Gaussian
    blurred (sigma in cells) before it is added, which keeps sparse per-ray
    updates from roughening the surface.  Field values are clamped to
    ``cfg.value_clamp``.  The ray stream depends only on ``seed`` and the view
    set, so runs that differ only in loss weights see the same rays.
    """
    if len(views) < 2:
        raise ValueError("need at least two views")
    grid = grid.copy()
    rays = collect_rays(views)
    ray_rng, eik_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    # field = clip(base + blur(offset)); the blur is self-adjoint, so the same
    # filter pulls gradients back (the clamp is treated as identity).
    if cfg.smoothing > 0:
        def smooth(a):
            return gaussian_filter(a, cfg.smoothing, mode="nearest")
    else:
        def smooth(a):
            return a
    base = grid.values.copy()
    offset = np.zeros_like(base)

    def render(out):
        np.clip(base + smooth(offset), -cfg.value_clamp, cfg.value_clamp, out=out)

    render(grid.values)
    state = AdamState.zeros_like(offset)
    result = OptimizeResult(field=grid, state=state, offset=offset)
    n_batch = min(cfg.rays_per_iteration, len(rays))
    last_good = grid.values.copy()
    for epoch in range(cfg.epochs):
        rows = np.sort(ray_rng.choice(len(rays), size=n_batch, replace=False))
        batch = rays.take(rows)
        terms, grad = epoch_losses(grid, batch, scene, cfg, epoch, eik_rng)
        if not (np.isfinite(terms[-1]) and np.all(np.isfinite(grad))):
            log.warning("loss diverged at epoch %d", epoch)
            grid.values[...] = last_good
            result.diverged = True
            break
        last_good[...] = grid.values
        result.trace.append(dict(epoch=epoch, L_sil=terms[0], L_sdf=terms[1], L_pol=terms[2], L_net=terms[3]))
        adam_step(offset, smooth(grad), state, cfg)
        render(grid.values)
        if callback is not None:
            callback(epoch, grid, terms)
        if checkpoint_path and checkpoint_every and (epoch + 1) % checkpoint_every == 0:
            save_checkpoint(checkpoint_path, grid, state, offset)
    if checkpoint_path:
        save_checkpoint(checkpoint_path, grid, state, offset)
    return result


# ---------------------------------------------------------------------------
# Persistence


def save_checkpoint(path, grid: VoxelGrid, state: AdamState = None, offset=None) -> None:
    """Write grid values (and optionally optimizer moments and the offset grid) atomically (``.npz``)."""
    path = str(path)
    tmp = path + ".tmp.npz"
    payload = dict(values=grid.values, bounds=np.array(grid.bounds), resolution=grid.n)
    if state is not None:
        payload.update(adam_m=state.m, adam_v=state.v, adam_step=state.step)
    if offset is not None:
        payload.update(offset=offset)
    np.savez(tmp, **payload)
    os.replace(tmp, path)


def load_checkpoint(path):
    with np.load(path) as z:
        grid = VoxelGrid(z["values"], tuple(z["bounds"]))
        state = None
        if "adam_m" in z:
            state = AdamState(z["adam_m"].copy(), z["adam_v"].copy(), int(z["adam_step"]))
    return grid, state


def write_loss_csv(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["epoch", "L_sil", "L_sdf", "L_pol", "L_net"])
        for row in trace:
            wr.writerow([row["epoch"], repr(row["L_sil"]), repr(row["L_sdf"]), repr(row["L_pol"]), repr(row["L_net"])])
