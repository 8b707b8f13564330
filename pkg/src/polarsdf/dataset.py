"""Synthetic multi-view polarization datasets and raw-image preprocessing.

Layout written by :func:`synth_dataset`::

    <out_dir>/manifest.json
    <out_dir>/view_###/{i0,i45,i90,i135,intensity,dolp,aolp,w}.pfm
    <out_dir>/view_###/mask.png
    <out_dir>/view_###/normal.pfm
"""

from __future__ import annotations

import logging
import os
import warnings
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import io
from . import polarimetry as pol
from .evaluation import Similarity
from .geometry import EmptySurface, SdfField, SmoothUnion, Sphere, Torus, VoxelGrid
from .optimize import ViewData
from .render import CameraPose, Scene, render_view

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
POLARIZER_ANGLES = (0, 45, 90, 135)
MAP_NAMES = ("i0", "i45", "i90", "i135", "intensity", "dolp", "aolp", "w")


class DimensionMismatch(ValueError):
    pass


# ---------------------------------------------------------------------------
# Built-in shapes


def blob() -> SdfField:
    """Sphere with three smoothly attached bumps."""
    bumps = [
        Sphere(0.22, (0.40, 0.05, 0.12)),
        Sphere(0.20, (-0.22, 0.33, 0.18)),
        Sphere(0.18, (-0.12, -0.30, 0.30)),
    ]
    return SmoothUnion((Sphere(0.40),) + tuple(bumps), k=0.08)


BUILTIN_SHAPES = {
    "sphere": lambda: Sphere(0.5),
    "blob": blob,
    "torus": lambda: Torus(0.45, 0.18),
}


def make_shape(name: str) -> SdfField:
    try:
        return BUILTIN_SHAPES[name]()
    except KeyError:
        raise ValueError(f"unknown shape {name!r}; choose from {sorted(BUILTIN_SHAPES)}") from None


# ---------------------------------------------------------------------------
# Rig


@dataclass(frozen=True)
class RigSpec:
    azimuths_deg: tuple = tuple(range(0, 360, 20))
    zeniths_deg: tuple = (50.0, 70.0)
    radius: float = 3.0
    width: int = 64
    height: int = 64
    fov_deg: float = 42.0
    views: int | None = None

    def cameras(self) -> list[CameraPose]:
        cams = []
        for zen in self.zeniths_deg:
            for az in self.azimuths_deg:
                th, ph = np.radians(zen), np.radians(az)
                c = self.radius * np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])
                cams.append(CameraPose.look_at(c, (0, 0, 0), (0, 0, 1), self.width, self.height, self.fov_deg))
        if self.views is not None:
            cams = [cams[i] for i in subsample_indices(len(cams), self.views)]
        return cams


def subsample_indices(total: int, count: int) -> list[int]:
    if not 1 <= count <= total:
        raise ValueError(f"cannot pick {count} of {total} views")
    return [int(i) for i in np.floor(np.arange(count) * total / count)]


# ---------------------------------------------------------------------------
# Raw polarization images


def malus_intensities(stokes) -> dict:
    """Intensities behind ideal linear polarizers at 0/45/90/135 degrees."""
    s = np.asarray(stokes, float)
    out = {}
    for a in POLARIZER_ANGLES:
        phi = np.radians(a)
        out[f"i{a}"] = 0.5 * (s[..., 0] + s[..., 1] * np.cos(2 * phi) + s[..., 2] * np.sin(2 * phi))
    return out


def preprocess_raw(i0, i45, i90, i135) -> dict:
    """Stokes maps and intensity/DoLP/AoLP from four polarizer images."""
    imgs = [np.asarray(a, float) for a in (i0, i45, i90, i135)]
    if len({a.shape for a in imgs}) != 1:
        raise DimensionMismatch("raw polarization images differ in shape")
    if any((a < 0).any() for a in imgs):
        warnings.warn("negative raw intensities clamped to 0", RuntimeWarning, stacklevel=2)
        imgs = [np.clip(a, 0.0, None) for a in imgs]
    a0, a45, a90, a135 = imgs
    s = np.stack([a0 + a90, a0 - a90, a45 - a135, np.zeros_like(a0)], axis=-1)
    return {
        "stokes": s,
        "intensity": pol.stokes_to_intensity(s),
        "dolp": pol.stokes_to_dolp(s),
        "aolp": pol.stokes_to_aolp(s),
        "aolp_valid": pol.aolp_defined(s),
    }


# ---------------------------------------------------------------------------
# Manifest


@dataclass
class ViewRecord:
    view_id: int
    camera: CameraPose
    files: dict

    def load(self, name: str) -> np.ndarray:
        path = self.files[name]
        return io.read_mask_png(path) if path.endswith(".png") else io.read_pfm(path)

    def view_data(self) -> ViewData:
        return ViewData(self.camera, self.load("mask"), self.load("aolp"))


@dataclass
class DatasetManifest:
    object_name: str
    views: list
    normalization: Similarity = dc_field(default_factory=Similarity.identity)
    scene: dict = dc_field(default_factory=dict)
    normalized: bool = True
    extra: dict = dc_field(default_factory=dict)

    def subset(self, count: int) -> "DatasetManifest":
        idx = subsample_indices(len(self.views), count)
        return DatasetManifest(
            self.object_name, [self.views[i] for i in idx], self.normalization,
            self.scene, self.normalized, self.extra,
        )

    def view_data(self) -> list[ViewData]:
        return [v.view_data() for v in self.views]


def _manifest_dict(m: DatasetManifest, root: Path) -> dict:
    return {
        "version": MANIFEST_VERSION,
        "object": m.object_name,
        "normalized": m.normalized,
        "normalization": m.normalization.to_dict(),
        "scene": m.scene,
        "extra": m.extra,
        "views": [
            {
                "id": v.view_id,
                "camera": io.camera_to_dict(v.camera),
                "files": {k: os.path.relpath(p, root) for k, p in sorted(v.files.items())},
            }
            for v in m.views
        ],
    }


def write_manifest(m: DatasetManifest, root) -> Path:
    root = Path(root)
    path = root / "manifest.json"
    io.write_json(path, _manifest_dict(m, root))
    return path


def load_manifest(path, check: bool = True) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    root = path.parent
    d = io.read_json(path)
    if d.get("version") != MANIFEST_VERSION:
        raise io.FormatError(f"unsupported manifest version {d.get('version')!r}")
    views = [
        ViewRecord(int(v["id"]), io.camera_from_dict(v["camera"]),
                   {k: str(root / p) for k, p in v["files"].items()})
        for v in d["views"]
    ]
    if len(views) < 2:
        raise io.FormatError("manifest needs at least two views")
    m = DatasetManifest(
        d["object"], views, Similarity.from_dict(d["normalization"]), d.get("scene", {}),
        bool(d.get("normalized", True)), d.get("extra", {}),
    )
    if check:
        check_manifest(m)
    return m


def check_manifest(m: DatasetManifest) -> None:
    """Every referenced file exists and all maps of a view share its H x W."""
    for v in m.views:
        hw = (v.camera.height, v.camera.width)
        for name, p in v.files.items():
            if not os.path.exists(p):
                raise io.FormatError(f"view {v.view_id}: missing {name} file {p}")
            shape = v.load(name).shape[:2]
            if shape != hw:
                raise io.FormatError(f"view {v.view_id}: {name} is {shape}, camera is {hw}")


# ---------------------------------------------------------------------------
# Synthesis


def _check_surface(fld: SdfField) -> None:
    vals = VoxelGrid.from_field(fld, 32).values
    if not (vals.max() > 0 and vals.min() < 0):
        raise EmptySurface("ground-truth field has no surface inside [-1, 1]^3")


def synth_view(scene: Scene, camera: CameraPose, include_transmission=True, noise=0.0, rng=None) -> dict:
    maps = render_view(scene, camera, include_transmission=include_transmission)
    raw = malus_intensities(maps.stokes)
    if noise > 0:
        raw = {k: np.clip(v + rng.normal(0.0, noise, v.shape), 0.0, None) for k, v in raw.items()}
    raw = {k: v.astype(np.float32) for k, v in raw.items()}
    derived = preprocess_raw(raw["i0"], raw["i45"], raw["i90"], raw["i135"])
    mask = maps.mask
    out = dict(raw)
    out.update(
        intensity=derived["intensity"] * mask,
        dolp=derived["dolp"] * mask,
        aolp=derived["aolp"] * mask,
        w=maps.reflection_pct,
        mask=mask,
        normal=maps.normal,
    )
    return out


def synth_dataset(
    gt_field: SdfField,
    rig: RigSpec,
    scene: Scene,
    out_dir,
    seed: int = 0,
    object_name: str = "object",
    include_transmission: bool = True,
    noise: float = 0.0,
) -> DatasetManifest:
    """Render a full synthetic capture of ``gt_field`` and write it to ``out_dir``.

    ``scene.field`` is ignored in favour of ``gt_field``.  Captured Stokes
    vectors include the transmitted 2-bounce component unless
    ``include_transmission`` is false.
    """
    _check_surface(gt_field)
    scene = Scene(gt_field, scene.eta_glass, scene.eta_air, scene.illumination, scene.tir_intensity)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cams = rig.cameras()
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(len(cams))]
    views = []
    for k, cam in enumerate(cams):
        vdir = out_dir / f"view_{k:03d}"
        vdir.mkdir(exist_ok=True)
        maps = synth_view(scene, cam, include_transmission, noise, rngs[k])
        files = {}
        for name in MAP_NAMES + ("normal",):
            p = vdir / f"{name}.pfm"
            io.write_pfm(p, maps[name])
            files[name] = str(p)
        p = vdir / "mask.png"
        io.write_mask_png(p, maps["mask"])
        files["mask"] = str(p)
        views.append(ViewRecord(k, cam, files))
        log.info("rendered view %d/%d", k + 1, len(cams))
    m = DatasetManifest(
        object_name,
        views,
        Similarity.identity(),
        io.scene_config_to_dict(scene),
        True,
        {"seed": seed, "include_transmission": include_transmission, "noise": noise},
    )
    write_manifest(m, out_dir)
    return m
