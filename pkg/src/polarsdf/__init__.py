"""Polarization-guided signed-distance reconstruction of transparent objects."""

from .dataset import RigSpec, blob, load_manifest, make_shape, preprocess_raw, synth_dataset
from .evaluation import EvalReport, chamfer, evaluate, normalize_poses
from .geometry import Box, SmoothUnion, Sphere, Torus, VoxelGrid, extract_surface, secant_intersect, sphere_grid
from .losses import LossConfig
from .optimize import optimize
from .presets import desk_config
from .render import CameraPose, IlluminationConfig, Scene, render_view, trace_reflection

__version__ = "0.1.0"

__all__ = [
    "Box",
    "CameraPose",
    "EvalReport",
    "IlluminationConfig",
    "LossConfig",
    "RigSpec",
    "Scene",
    "SmoothUnion",
    "Sphere",
    "Torus",
    "VoxelGrid",
    "blob",
    "chamfer",
    "desk_config",
    "evaluate",
    "extract_surface",
    "load_manifest",
    "make_shape",
    "normalize_poses",
    "optimize",
    "preprocess_raw",
    "render_view",
    "secant_intersect",
    "sphere_grid",
    "synth_dataset",
    "trace_reflection",
]
