"""Render sequence files: PNG color, raw float depth/opacity, poses manifest.

Raw float maps use a 20-byte little-endian header (``b"VXFLOAT\\0"``, height,
width, itemsize as uint32) followed by row-major samples, so depth survives a
round trip exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .consistency import PosedRender
from .datasets import DatasetError, load_poses, read_image, save_poses, write_image
from .volume_renderer import Camera, RenderOutput

RAW_MAGIC = b"VXFLOAT\x00"
_RAW_HEADER = struct.Struct("<8sIII")
POSES_FILE = "poses.json"


def write_raw(path, array) -> None:
    arr = np.asarray(array)
    if arr.ndim != 2 or arr.dtype not in (np.float32, np.float64):
        raise ValueError("raw maps must be 2-D float32 or float64 arrays")
    h, w = arr.shape
    data = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    Path(path).write_bytes(_RAW_HEADER.pack(RAW_MAGIC, h, w, arr.dtype.itemsize) + data)


def read_raw(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < _RAW_HEADER.size:
        raise ValueError(f"{path}: truncated raw map")
    magic, h, w, itemsize = _RAW_HEADER.unpack_from(blob)
    if magic != RAW_MAGIC or itemsize not in (4, 8):
        raise ValueError(f"{path}: not a raw float map")
    body = blob[_RAW_HEADER.size:]
    if len(body) != h * w * itemsize:
        raise ValueError(f"{path}: expected {h * w * itemsize} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype=f"<f{itemsize}").reshape(h, w).copy()


def write_depth_png(path, depth, max_depth: float | None = None) -> None:
    """16-bit preview of a depth map, scaled to the largest depth."""
    d = np.asarray(depth, dtype=np.float64)
    top = max_depth or (float(d.max()) if d.size and d.max() > 0 else 1.0)
    img = np.clip(np.round(d / top * 65535), 0, 65535).astype(np.uint16)
    Image.fromarray(img).save(path)


def save_render_sequence(renders: list[PosedRender], out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, pr in enumerate(renders):
        write_image(out / f"rgb_{i:03d}.png", pr.render.rgb)
        write_raw(out / f"depth_{i:03d}.raw", pr.render.depth)
        write_raw(out / f"opacity_{i:03d}.raw", pr.render.opacity)
        write_depth_png(out / f"depth_{i:03d}.png", pr.render.depth)
    save_poses([pr.camera for pr in renders], out / POSES_FILE)


def load_render_sequence(in_dir) -> list[PosedRender]:
    root = Path(in_dir)
    if not (root / POSES_FILE).is_file():
        raise DatasetError(f"{root} has no {POSES_FILE}; is it a render/stylize output?")
    cams, _ = load_poses(root / POSES_FILE)
    renders = []
    for i, cam in enumerate(cams):
        try:
            rgb = read_image(root / f"rgb_{i:03d}.png", (0.0, 0.0, 0.0))
            depth = read_raw(root / f"depth_{i:03d}.raw")
            opacity = read_raw(root / f"opacity_{i:03d}.raw")
        except (OSError, ValueError) as exc:
            raise DatasetError(f"view {i} in {root}: {exc}") from exc
        renders.append(PosedRender(cam, RenderOutput(rgb, depth, opacity)))
    return renders


def posed(cameras: list[Camera], outputs: list[RenderOutput]) -> list[PosedRender]:
    return [PosedRender(c, o) for c, o in zip(cameras, outputs)]
