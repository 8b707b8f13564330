"""Polarimetric forward rendering and the 2-bounce reflection-percentage tracer.

The light source is rigidly attached to the camera; illumination is looked up
from the angle between the camera ray and the sampled direction only.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from . import polarimetry as pol
from .geometry import Intersection, SdfField, secant_intersect, unit_sphere_clip
from .polarimetry import normalize

# restart offset for interior rays, along the refracted direction
INTERIOR_OFFSET = 1e-4


@dataclass(frozen=True)
class IlluminationConfig:
    source_intensity: float = 1.0
    ambient_intensity: float = 0.1
    delta: float = np.pi / 18

    def __post_init__(self):
        if not 0 <= self.delta < np.pi / 2:
            raise ValueError("delta must lie in [0, pi/2)")
        if self.source_intensity < 0 or self.ambient_intensity < 0:
            raise ValueError("intensities must be non-negative")

    def scaled(self, k: float) -> "IlluminationConfig":
        return IlluminationConfig(self.source_intensity * k, self.ambient_intensity * k, self.delta)


@dataclass
class Scene:
    field: SdfField
    eta_glass: float = 1.5
    eta_air: float = 1.0
    illumination: IlluminationConfig = dc_field(default_factory=IlluminationConfig)
    # radiance assigned to I_t1 when the interior path cannot be traced (TIR or miss)
    tir_intensity: float = 0.1

    def __post_init__(self):
        if self.eta_glass <= 1:
            raise ValueError("eta_glass must exceed 1")


@dataclass
class CameraPose:
    """Pinhole camera; ``rotation`` is world-from-camera, ``center`` the optical center.

    Camera axes follow the x-right, y-down, z-forward convention.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.center = np.asarray(self.center, dtype=float)
        if not np.allclose(self.rotation.T @ self.rotation, np.eye(3), atol=1e-9):
            raise ValueError("rotation must be orthonormal")

    @classmethod
    def look_at(cls, center, target=(0, 0, 0), world_up=(0, 0, 1), width=64, height=64, fov_deg=45.0):
        center = np.asarray(center, float)
        z = normalize(np.asarray(target, float) - center)
        x = np.cross(-np.asarray(world_up, float), z)
        if np.linalg.norm(x) < 1e-9:
            x = np.cross(np.array([0.0, -1.0, 0.0]), z)
        x = normalize(x)
        y = np.cross(z, x)
        f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
        return cls(f, f, width / 2, height / 2, width, height, np.stack([x, y, z], axis=1), center)

    @property
    def up(self) -> np.ndarray:
        return self.rotation @ np.array([0.0, -1.0, 0.0])

    @property
    def forward(self) -> np.ndarray:
        return self.rotation[:, 2]

    @property
    def world_from_camera(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.center
        return m

    def pixel_rays(self, pixels=None):
        """Origins and unit directions through pixel centers.

        ``pixels`` is an array of ``(u, v)`` column/row pairs; all pixels in
        row-major order when omitted.
        """
        if pixels is None:
            v, u = np.mgrid[0 : self.height, 0 : self.width]
            pixels = np.stack([u.ravel(), v.ravel()], axis=-1)
        pixels = np.atleast_2d(np.asarray(pixels, float))
        d_cam = np.stack(
            [
                (pixels[:, 0] + 0.5 - self.cx) / self.fx,
                (pixels[:, 1] + 0.5 - self.cy) / self.fy,
                np.ones(len(pixels)),
            ],
            axis=-1,
        )
        d = normalize(d_cam @ self.rotation.T)
        return np.broadcast_to(self.center, d.shape).copy(), d


@dataclass
class PolarizationMaps:
    intensity: np.ndarray
    dolp: np.ndarray
    aolp: np.ndarray
    reflection_pct: np.ndarray
    mask: np.ndarray
    normal: Optional[np.ndarray] = None
    stokes: Optional[np.ndarray] = None


# ---------------------------------------------------------------------------
# Illumination and ray directions


def illumination_from_angle(alpha, cfg: IlluminationConfig):
    alpha = np.asarray(alpha, dtype=float)
    lit = (alpha >= 0) & (alpha < np.pi / 2 - cfg.delta)
    return np.where(lit, cfg.source_intensity, cfg.ambient_intensity)


def sample_illumination(view_dir_v_c, sample_dir_v_s, cfg: IlluminationConfig):
    """Radiance seen along ``v_s`` for a camera looking along ``v_c``."""
    v_c = np.asarray(view_dir_v_c, float)
    v_s = np.asarray(sample_dir_v_s, float)
    c = -np.sum(v_c * v_s, axis=-1) / (np.linalg.norm(v_c, axis=-1) * np.linalg.norm(v_s, axis=-1))
    return illumination_from_angle(np.arccos(np.clip(c, -1.0, 1.0)), cfg)


def reflect(d, n):
    return d - 2 * np.sum(d * n, axis=-1, keepdims=True) * n


def refract(d, n, eta_ratio):
    """Refract ``d`` through a surface whose normal ``n`` faces against ``d``.

    ``eta_ratio`` is ``eta_incident / eta_transmitted``.  Returns
    ``(direction, tir)``; the direction is the mirror one where TIR occurs.
    """
    cos_i = np.clip(-np.sum(d * n, axis=-1), 0.0, 1.0)
    sin_t2 = eta_ratio**2 * (1 - cos_i**2)
    tir = sin_t2 > 1
    cos_t = np.sqrt(np.clip(1 - sin_t2, 0.0, None))
    t = eta_ratio * d + (eta_ratio * cos_i - cos_t)[..., None] * n
    t = np.where(tir[..., None], reflect(d, n), t)
    return normalize(t), tir


# ---------------------------------------------------------------------------
# Specular Mueller chain


def specular_mueller(v_o, normal, camera_up, eta_i, eta_t):
    """Full chain ``R_c R_o M_r R_i`` for reflection towards ``v_o``.

    ``v_o`` is the propagation direction of the reflected light (towards the
    camera) and ``normal`` the outward surface normal.
    """
    v_o = np.asarray(v_o, float)
    n = np.asarray(normal, float)
    v_i = reflect(v_o, n)  # incident propagation direction
    cos_i = np.clip(np.sum(v_o * n, axis=-1), 0.0, 1.0)
    r_s, r_p, _, _ = pol.fresnel_amplitudes(eta_i, eta_t, cos_i)
    m = pol.mueller_reflect((r_s, r_p))
    chain = pol.frame_camera(v_o, camera_up) @ pol.frame_out(v_i, v_o) @ m @ pol.frame_in(v_i, n)
    return chain


def specular_stokes(scene: Scene, directions, normals, camera_up):
    """Observed Stokes vectors of the surface reflection for camera rays ``directions``."""
    d = np.asarray(directions, float)
    n = np.asarray(normals, float)
    mirror = reflect(d, n)
    radiance = sample_illumination(d, mirror, scene.illumination)
    s0 = np.zeros(d.shape[:-1] + (4,))
    s0[..., 0] = radiance
    up = np.broadcast_to(camera_up, d.shape)
    return pol.apply(specular_mueller(-d, n, up, scene.eta_air, scene.eta_glass), s0)


def specular_aolp(directions, normals, camera_up):
    """Closed-form AoLP of specular reflection (direction perpendicular to the incidence plane)."""
    v_o = -np.asarray(directions, float)
    x = pol.camera_x_axis(v_o, np.broadcast_to(camera_up, v_o.shape))
    y = np.cross(v_o, x)
    s = np.cross(normals, v_o)
    return pol.wrap_angle(np.arctan2(np.sum(s * y, -1), np.sum(s * x, -1)))


# ---------------------------------------------------------------------------
# Reflection percentage


@dataclass
class TraceResult:
    w: np.ndarray
    I_r0: np.ndarray
    I_t0: np.ndarray
    I_r1: np.ndarray
    I_t1: np.ndarray
    I_t2: np.ndarray
    F1: np.ndarray
    tir: np.ndarray
    refracted: np.ndarray
    exit_dir: np.ndarray
    exit_normal: np.ndarray
    exit_point: np.ndarray


def trace_reflection(scene: Scene, hit: Intersection) -> TraceResult:
    """Two-bounce trace for every ray of ``hit`` (all rows must be hits).

    Rays are followed from the camera: mirror at the first interface for
    ``I_r1``; refraction in, secant march to the exit interface, refraction out
    for ``I_t2``.  TIR at the exit and interior misses use
    ``scene.tir_intensity`` for ``I_t1``.
    """
    cfg = scene.illumination
    ea, eg = scene.eta_air, scene.eta_glass
    d = hit.directions
    n1 = hit.normal
    v0 = -d
    cos1 = np.clip(np.sum(v0 * n1, axis=-1), 0.0, 1.0)

    r1 = reflect(d, n1)
    I_r1 = sample_illumination(d, r1, cfg)
    F1 = pol.fresnel_reflectance(ea, eg, cos1)
    I_r0 = F1 * I_r1

    t1, _ = refract(d, n1, ea / eg)
    start = hit.point + INTERIOR_OFFSET * t1
    _, t_exit, ok = unit_sphere_clip(start, t1)
    inner = secant_intersect(scene.field, start, t1, 0.0, np.where(ok, t_exit, 0.0), want_sign_at_start=-1)
    n2 = inner.normal
    t2, tir = refract(t1, -n2, eg / ea)
    tir = tir | ~inner.hit
    I_t2 = np.where(tir, 0.0, sample_illumination(d, t2, cfg))
    F2 = pol.fresnel_term(ea, eg, t2, t1, n2)
    I_t1 = np.where(tir, scene.tir_intensity, (1 - np.nan_to_num(F2)) * I_t2)
    F1_out = pol.fresnel_term(eg, ea, t1, v0, n1)
    I_t0 = (1 - F1_out) * I_t1
    total = I_r0 + I_t0
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(total > 0, I_r0 / total, 0.0)
    return TraceResult(
        w=np.clip(w, 0.0, 1.0),
        I_r0=I_r0,
        I_t0=I_t0,
        I_r1=I_r1,
        I_t1=I_t1,
        I_t2=I_t2,
        F1=F1,
        tir=tir,
        refracted=t1,
        exit_dir=t2,
        exit_normal=n2,
        exit_point=inner.point,
    )


def transmitted_stokes(scene: Scene, hit: Intersection, tr: TraceResult, camera_up):
    """Stokes vectors of the transmitted component along the traced 2-bounce path.

    Used to synthesize captured data; the optimizer's renderer never models it.
    """
    ea, eg = scene.eta_air, scene.eta_glass
    d = hit.directions
    n1 = hit.normal
    v_o = -d
    L1 = -tr.refracted  # inside, towards the first interface
    m = d.shape[0]

    s = np.zeros((m, 4))
    s[:, 0] = np.where(tr.tir, scene.tir_intensity, tr.I_t2)
    # entry through the exit interface (light travels -t2 -> -t1)
    L2 = -tr.exit_dir
    n2 = tr.exit_normal
    cos2 = np.clip(-np.sum(L2 * n2, axis=-1), 0.0, 1.0)
    s2_axis = np.cross(n2, L2)
    m2 = pol.frame_between(pol.implicit_frame(L2).x_axis, s2_axis, L2)
    s_in = pol.apply(pol.mueller_transmit(ea, eg, cos2) @ m2, s)
    s = np.where(tr.tir[:, None], s, s_in)
    x_inside = np.where(
        (tr.tir | (np.linalg.norm(s2_axis, axis=-1) < pol.DEGENERATE_EPS))[:, None],
        pol.implicit_frame(L1).x_axis,
        pol.normalize(s2_axis),
    )
    # exit through the first interface towards the camera
    s1_axis = np.cross(n1, L1)
    cos1 = np.clip(np.sum(L1 * n1, axis=-1), 0.0, 1.0)
    s = pol.apply(pol.frame_between(x_inside, s1_axis, L1), s)
    s = pol.apply(pol.mueller_transmit(eg, ea, cos1), s)
    x_out = np.where(
        (np.linalg.norm(s1_axis, axis=-1) < pol.DEGENERATE_EPS)[:, None],
        x_inside,
        pol.normalize(s1_axis),
    )
    x_cam = np.cross(np.broadcast_to(camera_up, v_o.shape), v_o)
    return pol.apply(pol.frame_between(x_out, x_cam, v_o), s)


# ---------------------------------------------------------------------------
# Pixel and view rendering


def cast_camera_rays(fld: SdfField, origins, directions, **kw) -> Intersection:
    t_en, t_ex, inside = unit_sphere_clip(origins, directions)
    hit = secant_intersect(fld, origins, directions, t_en, np.where(inside, t_ex, t_en), -1, **kw)
    hit.hit &= inside
    return hit


def render_pixel_stokes(scene: Scene, camera: CameraPose, pixel):
    """Stokes vector ``s_c`` for one pixel, or ``None`` for background."""
    o, d = camera.pixel_rays([pixel])
    hit = cast_camera_rays(scene.field, o, d)
    if not hit.hit[0]:
        return None
    return specular_stokes(scene, d, hit.normal, camera.up)[0]


def trace_reflection_pct(scene: Scene, camera: CameraPose, pixel, hit: Intersection = None) -> float:
    o, d = camera.pixel_rays([pixel])
    if hit is None:
        hit = cast_camera_rays(scene.field, o, d)
    if not hit.hit[0]:
        raise ValueError("pixel does not see the surface")
    return float(trace_reflection(scene, hit).w[0])


def subset_hits(hit: Intersection, rows) -> Intersection:
    return Intersection(
        hit=hit.hit[rows],
        t=hit.t[rows],
        t_minus=hit.t_minus[rows],
        t_plus=hit.t_plus[rows],
        t_start=hit.t_start[rows],
        point=hit.point[rows],
        normal=hit.normal[rows],
        converged=hit.converged[rows],
        origins=hit.origins[rows],
        directions=hit.directions[rows],
    )


def render_view(scene: Scene, camera: CameraPose, include_transmission: bool = False) -> PolarizationMaps:
    """Render intensity/DoLP/AoLP/reflection-percentage maps for one camera.

    With ``include_transmission`` the transmitted component traced along the
    2-bounce path is added to the specular Stokes vector; this is how captured
    data is synthesized.
    """
    h, w = camera.height, camera.width
    o, d = camera.pixel_rays()
    hit = cast_camera_rays(scene.field, o, d)
    rows = np.flatnonzero(hit.hit)
    stokes = np.zeros((h * w, 4))
    wmap = np.zeros(h * w)
    normal = np.zeros((h * w, 3))
    if rows.size:
        sub = subset_hits(hit, rows)
        s = specular_stokes(scene, sub.directions, sub.normal, camera.up)
        tr = trace_reflection(scene, sub)
        if include_transmission:
            s = s + transmitted_stokes(scene, sub, tr, camera.up)
        stokes[rows] = s
        wmap[rows] = tr.w
        normal[rows] = sub.normal
    mask = hit.hit.astype(float)
    return PolarizationMaps(
        intensity=pol.stokes_to_intensity(stokes).reshape(h, w),
        dolp=pol.stokes_to_dolp(stokes).reshape(h, w),
        aolp=pol.stokes_to_aolp(stokes).reshape(h, w),
        reflection_pct=wmap.reshape(h, w),
        mask=mask.reshape(h, w),
        normal=normal.reshape(h, w, 3),
        stokes=stokes.reshape(h, w, 4),
    )
