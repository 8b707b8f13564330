"""Command-line entry point: ``polarsdf <subcommand> ...``.

Exit status: 0 on success, 1 on usage or validation errors, 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .dataset import (
    BUILTIN_SHAPES,
    RigSpec,
    load_manifest,
    make_shape,
    preprocess_raw,
    synth_dataset,
)
from .evaluation import CSV_HEADER, evaluate
from .geometry import EmptySurface, VoxelGrid, extract_surface, read_obj, sphere_grid, write_obj
from .losses import LossConfig
from .optimize import Diverged, load_checkpoint, optimize, write_loss_csv
from .presets import desk_config
from .render import IlluminationConfig, Scene, subset_hits, cast_camera_rays, render_view, trace_reflection

log = logging.getLogger("polarsdf")

VALIDATION_ERRORS = (
    ValueError,  # includes FormatError, DimensionMismatch, EmptySet, DegenerateRig
    FileNotFoundError,
    EmptySurface,
    KeyError,
)


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# shared options


def _add_scene_flags(p):
    g = p.add_argument_group("scene")
    g.add_argument("--eta-glass", type=float, default=1.5)
    g.add_argument("--eta-air", type=float, default=1.0)
    g.add_argument("--source-intensity", type=float, default=1.0)
    g.add_argument("--ambient-intensity", type=float, default=0.1)
    g.add_argument("--delta", type=float, default=np.pi / 18, help="light-source margin in radians")
    g.add_argument("--tir-intensity", type=float, default=0.1)
    g.add_argument("--scene-config", help="JSON scene config; overrides the flags above")


def _scene(args, fld) -> Scene:
    if args.scene_config:
        return io.scene_from_dict(io.read_json(args.scene_config), fld)
    return Scene(
        fld,
        eta_glass=args.eta_glass,
        eta_air=args.eta_air,
        illumination=IlluminationConfig(args.source_intensity, args.ambient_intensity, args.delta),
        tir_intensity=args.tir_intensity,
    )


def _add_loss_flags(p):
    """One flag per LossConfig field; unset flags fall back to the chosen preset."""
    g = p.add_argument_group("loss / optimizer")
    g.add_argument("--preset", choices=("desk", "mlp"), default="desk",
                   help="desk: tuned for a voxel grid on a CPU; mlp: lr 1e-4, 20480 rays, 1000 epochs")
    for f in dataclasses.fields(LossConfig):
        if f.name == "betas":
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.type in (bool, "bool"):
            g.add_argument("--no-" + f.name.replace("_", "-").removeprefix("use-"),
                           dest=f.name, action="store_false", default=None)
        else:
            conv = int if f.type in (int, "int") else float
            g.add_argument(flag, dest=f.name, type=conv, default=None)
    g.add_argument("--lr", dest="learning_rate", type=float, default=None)


def _loss_config(args) -> LossConfig:
    base = desk_config() if args.preset == "desk" else LossConfig()
    overrides = {
        f.name: getattr(args, f.name)
        for f in dataclasses.fields(LossConfig)
        if getattr(args, f.name, None) is not None
    }
    return dataclasses.replace(base, **overrides)


def load_field(spec: str):
    """A built-in shape name, a checkpoint (``.npz``), or a grid saved as ``.npy``."""
    if spec in BUILTIN_SHAPES:
        return make_shape(spec)
    path = Path(spec)
    if not path.exists():
        raise FileNotFoundError(f"no such field: {spec} (built-ins: {sorted(BUILTIN_SHAPES)})")
    if path.suffix == ".npz":
        return load_checkpoint(path)[0]
    if path.suffix == ".npy":
        return VoxelGrid(np.load(path))
    raise ValueError(f"unsupported field file {spec}")


def _load_shape(spec: str):
    if spec.endswith(".obj"):
        return read_obj(spec)
    return load_field(spec)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    rig = RigSpec(width=args.width, height=args.height, fov_deg=args.fov, radius=args.radius, views=args.views)
    fld = load_field(args.shape)
    m = synth_dataset(
        fld, rig, _scene(args, fld), args.out, seed=args.seed,
        object_name=args.name or Path(args.shape).stem,
        include_transmission=not args.no_transmission, noise=args.noise,
    )
    print(f"wrote {len(m.views)} views to {args.out}")


def cmd_render(args):
    fld = load_field(args.field)
    cam = io.camera_from_dict(io.read_json(args.camera))
    maps = render_view(_scene(args, fld), cam, include_transmission=args.transmission)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("intensity", "dolp", "aolp"):
        io.write_pfm(out / f"{name}.pfm", getattr(maps, name))
    io.write_pfm(out / "w.pfm", maps.reflection_pct)
    io.write_pfm(out / "normal.pfm", maps.normal)
    io.write_mask_png(out / "mask.png", maps.mask)
    print(f"wrote maps to {out}")


def cmd_trace_w(args):
    fld = load_field(args.field)
    cam = io.camera_from_dict(io.read_json(args.camera))
    scene = _scene(args, fld)
    o, d = cam.pixel_rays()
    hit = cast_camera_rays(fld, o, d)
    wmap = np.zeros(cam.width * cam.height)
    rows = np.flatnonzero(hit.hit)
    if rows.size:
        wmap[rows] = trace_reflection(scene, subset_hits(hit, rows)).w
    io.write_pfm(args.out, wmap.reshape(cam.height, cam.width))
    print(f"wrote {args.out}")


def cmd_reconstruct(args):
    cfg = _loss_config(args)
    manifest = load_manifest(args.data)
    if args.views:
        manifest = manifest.subset(args.views)
    views = manifest.view_data()
    if args.init:
        init = load_field(args.init)
        if not isinstance(init, VoxelGrid):
            init = VoxelGrid.from_field(init, args.resolution)
    else:
        init = sphere_grid(args.resolution, args.init_radius)
    scene = io.scene_from_dict(manifest.scene, init) if manifest.scene else _scene(args, init)
    result = optimize(
        init, views, scene, cfg, seed=args.seed,
        checkpoint_path=args.out, checkpoint_every=args.checkpoint_every,
    )
    if args.loss_csv:
        write_loss_csv(args.loss_csv, result.trace)
    if result.diverged:
        raise Diverged(f"optimization diverged after {len(result.trace)} epochs; last good field saved to {args.out}")
    print(f"wrote {args.out} after {len(result.trace)} epochs")


def cmd_eval(args):
    rec = _load_shape(args.recon)
    gt = _load_shape(args.gt)
    rep = evaluate(rec, gt, count=args.samples, seed=args.seed)
    print(CSV_HEADER)
    print(rep.csv_row(args.object or Path(args.gt).stem, args.views if args.views is not None else ""))


def cmd_preprocess(args):
    raw = [io.read_pfm(p) for p in (args.i0, args.i45, args.i90, args.i135)]
    maps = preprocess_raw(*raw)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("intensity", "dolp", "aolp"):
        io.write_pfm(out / f"{name}.pfm", maps[name])
    print(f"wrote maps to {out}")


def cmd_export_mesh(args):
    grid = load_field(args.checkpoint)
    if not isinstance(grid, VoxelGrid):
        grid = VoxelGrid.from_field(grid, args.resolution)
    mesh = extract_surface(grid)
    write_obj(mesh, args.out)
    print(f"wrote {len(mesh.vertices)} vertices, {len(mesh.faces)} faces to {args.out}")


# ---------------------------------------------------------------------------


def build_parser() -> Parser:
    p = Parser(prog="polarsdf", description="Polarization-guided SDF reconstruction of transparent objects.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    s = sub.add_parser("synth", help="render a synthetic multi-view dataset")
    s.add_argument("--shape", required=True, help=f"one of {sorted(BUILTIN_SHAPES)} or a field file")
    s.add_argument("--out", required=True)
    s.add_argument("--name")
    s.add_argument("--views", type=int, help="subsample the 36-view rig")
    s.add_argument("--width", type=int, default=64)
    s.add_argument("--height", type=int, default=64)
    s.add_argument("--fov", type=float, default=42.0)
    s.add_argument("--radius", type=float, default=3.0)
    s.add_argument("--noise", type=float, default=0.0, help="Gaussian noise std on raw intensities")
    s.add_argument("--no-transmission", action="store_true", help="capture the specular component only")
    _add_scene_flags(s)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("render", help="render polarization maps of a field from one camera")
    s.add_argument("--field", required=True)
    s.add_argument("--camera", required=True, help="camera JSON")
    s.add_argument("--out", required=True)
    s.add_argument("--transmission", action="store_true", help="add the transmitted component")
    _add_scene_flags(s)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("trace-w", help="reflection-percentage map of a field from one camera")
    s.add_argument("--field", required=True)
    s.add_argument("--camera", required=True)
    s.add_argument("--out", required=True, help="output PFM")
    _add_scene_flags(s)
    s.set_defaults(func=cmd_trace_w)

    s = sub.add_parser("reconstruct", help="optimize a voxel SDF against a dataset")
    s.add_argument("--data", required=True, help="dataset directory or manifest.json")
    s.add_argument("--out", required=True, help="checkpoint (.npz)")
    s.add_argument("--loss-csv")
    s.add_argument("--views", type=int)
    s.add_argument("--resolution", type=int, default=48)
    s.add_argument("--init", help="initial field instead of a sphere")
    s.add_argument("--init-radius", type=float, default=0.5)
    s.add_argument("--checkpoint-every", type=int, default=0)
    _add_loss_flags(s)
    _add_scene_flags(s)
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("eval", help="chamfer distance / normal angle between two shapes")
    s.add_argument("--recon", required=True, help="checkpoint, .obj, or built-in shape")
    s.add_argument("--gt", required=True)
    s.add_argument("--samples", type=int, default=10000)
    s.add_argument("--object")
    s.add_argument("--views", type=int)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("preprocess", help="intensity/DoLP/AoLP from four polarizer images")
    for a in ("i0", "i45", "i90", "i135"):
        s.add_argument(f"--{a}", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("export-mesh", help="marching-cubes surface of a checkpoint as OBJ")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--resolution", type=int, default=128, help="sampling for analytic fields")
    s.set_defaults(func=cmd_export_mesh)

    for sp in sub.choices.values():
        sp.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except VALIDATION_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - anything else is a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"failed: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
