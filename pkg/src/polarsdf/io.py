"""File formats: PFM maps, PNG masks, JSON scene/camera configs."""

from __future__ import annotations

import json
import os
import re
import sys

import numpy as np
from PIL import Image

from .render import CameraPose, IlluminationConfig, Scene

CONFIG_VERSION = 1


class FormatError(ValueError):
    pass


def _atomic_write_bytes(path, data: bytes) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_pfm(path, image: np.ndarray) -> None:
    """Write an ``H x W`` (``Pf``) or ``H x W x 3`` (``PF``) float32 map.

    Rows are stored bottom-up, little-endian (negative scale).
    """
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 2:
        tag = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        tag = b"PF"
    else:
        raise FormatError(f"unsupported PFM shape {img.shape}")
    h, w = img.shape[:2]
    header = tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n"
    body = np.flipud(img).astype("<f4").tobytes()
    _atomic_write_bytes(path, header + body)


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        tag = fh.readline().rstrip()
        if tag not in (b"Pf", b"PF"):
            raise FormatError(f"{path}: not a PFM file")
        dims = re.match(rb"^\s*(\d+)\s+(\d+)\s*$", fh.readline())
        if not dims:
            raise FormatError(f"{path}: malformed dimensions")
        w, h = int(dims.group(1)), int(dims.group(2))
        scale = float(fh.readline().strip())
        endian = "<" if scale < 0 else ">"
        ch = 3 if tag == b"PF" else 1
        data = np.frombuffer(fh.read(), dtype=endian + "f4")
    if data.size != w * h * ch:
        raise FormatError(f"{path}: expected {w * h * ch} floats, found {data.size}")
    img = data.reshape((h, w, ch) if ch == 3 else (h, w))
    img = np.flipud(img)
    if endian != "<" or sys.byteorder != "little":
        img = img.astype(np.float32)
    return np.ascontiguousarray(img)


def write_mask_png(path, mask: np.ndarray) -> None:
    tmp = f"{path}.tmp.png"
    Image.fromarray((np.asarray(mask) > 0.5).astype(np.uint8) * 255).save(tmp)
    os.replace(tmp, path)


def read_mask_png(path) -> np.ndarray:
    return (np.asarray(Image.open(path).convert("L")) > 127).astype(np.float32)


def write_json(path, obj) -> None:
    _atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# Config schemas
#
# camera:  {"version", "width", "height", "fx", "fy", "cx", "cy",
#           "world_from_camera": 4x4 row-major}
# scene:   {"version", "eta_glass", "eta_air", "tir_intensity",
#           "illumination": {"source_intensity", "ambient_intensity", "delta"}}

CAMERA_KEYS = ("width", "height", "fx", "fy", "cx", "cy", "world_from_camera")


def camera_to_dict(cam: CameraPose) -> dict:
    return {
        "version": CONFIG_VERSION,
        "width": int(cam.width),
        "height": int(cam.height),
        "fx": float(cam.fx),
        "fy": float(cam.fy),
        "cx": float(cam.cx),
        "cy": float(cam.cy),
        "world_from_camera": cam.world_from_camera.tolist(),
    }


def camera_from_dict(d: dict) -> CameraPose:
    missing = [k for k in CAMERA_KEYS if k not in d]
    if missing:
        raise FormatError(f"camera config missing keys: {missing}")
    m = np.asarray(d["world_from_camera"], float)
    if m.shape != (4, 4):
        raise FormatError("world_from_camera must be 4x4")
    return CameraPose(
        float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
        int(d["width"]), int(d["height"]), m[:3, :3], m[:3, 3],
    )


def scene_config_to_dict(scene: Scene) -> dict:
    il = scene.illumination
    return {
        "version": CONFIG_VERSION,
        "eta_glass": scene.eta_glass,
        "eta_air": scene.eta_air,
        "tir_intensity": scene.tir_intensity,
        "illumination": {
            "source_intensity": il.source_intensity,
            "ambient_intensity": il.ambient_intensity,
            "delta": il.delta,
        },
    }


def scene_from_dict(d: dict, field) -> Scene:
    il = d.get("illumination", {})
    return Scene(
        field=field,
        eta_glass=float(d.get("eta_glass", 1.5)),
        eta_air=float(d.get("eta_air", 1.0)),
        illumination=IlluminationConfig(
            source_intensity=float(il.get("source_intensity", 1.0)),
            ambient_intensity=float(il.get("ambient_intensity", 0.1)),
            delta=float(il.get("delta", np.pi / 18)),
        ),
        tir_intensity=float(d.get("tir_intensity", 0.1)),
    )
