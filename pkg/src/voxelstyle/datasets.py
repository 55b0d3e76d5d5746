"""Posed image datasets in the NeRF-Synthetic ``transforms.json`` layout."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .volume_renderer import BLACK, WHITE, Camera

MANIFEST = "transforms.json"


class DatasetError(ValueError):
    pass


@dataclass
class ViewDataset:
    images: list[np.ndarray]  # (H, W, 3) floats in [0, 1]
    poses: list[np.ndarray]  # 4x4 camera-to-world
    camera_angle_x: float
    white_background: bool = True
    file_paths: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.images:
            raise DatasetError("dataset has no views")
        if len(self.images) != len(self.poses):
            raise DatasetError("image and pose counts differ")
        shapes = {im.shape for im in self.images}
        if len(shapes) != 1:
            raise DatasetError(f"images differ in resolution: {sorted(shapes)}")
        for i, pose in enumerate(self.poses):
            if np.shape(pose) != (4, 4) or not np.all(np.isfinite(pose)):
                raise DatasetError(f"view {i}: pose must be a finite 4x4 matrix")

    def __len__(self):
        return len(self.images)

    @property
    def resolution(self) -> tuple[int, int]:
        h, w = self.images[0].shape[:2]
        return w, h

    @property
    def background(self):
        return WHITE if self.white_background else BLACK

    def camera(self, i: int) -> Camera:
        w, h = self.resolution
        return Camera(w, h, self.camera_angle_x, self.poses[i])

    def cameras(self) -> list[Camera]:
        return [self.camera(i) for i in range(len(self))]

    def subset(self, idx) -> "ViewDataset":
        idx = list(idx)
        paths = [self.file_paths[i] for i in idx] if self.file_paths else []
        return ViewDataset([self.images[i] for i in idx], [self.poses[i] for i in idx],
                           self.camera_angle_x, self.white_background, paths)


def read_image(path: Path, background) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            mode = "RGBA" if im.mode in ("RGBA", "LA", "PA") or "transparency" in im.info else "RGB"
            arr = np.asarray(im.convert(mode), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot decode image {path}: {exc}") from exc
    if arr.shape[-1] == 4:
        a = arr[..., 3:]
        arr = arr[..., :3] * a + np.asarray(background) * (1.0 - a)
    return arr


def write_image(path: Path, rgb: np.ndarray) -> None:
    arr = np.clip(np.round(np.asarray(rgb) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def _resolve_image(root: Path, file_path: str) -> Path:
    p = root / file_path
    if p.suffix == "" and not p.exists():
        p = p.with_suffix(".png")
    return p


def load_dataset(path, white_background: bool | None = None) -> ViewDataset:
    """Load a dataset directory (or a manifest file inside one).

    ``white_background`` overrides the manifest's ``white_background`` flag,
    which defaults to true.
    """
    path = Path(path)
    manifest = path / MANIFEST if path.is_dir() else path
    if not manifest.is_file():
        raise DatasetError(f"missing manifest: {manifest}")
    try:
        meta = json.loads(manifest.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"manifest {manifest} is not valid JSON: {exc}") from exc
    if "camera_angle_x" not in meta or "frames" not in meta:
        raise DatasetError(f"manifest {manifest} needs 'camera_angle_x' and 'frames'")
    if white_background is None:
        white_background = bool(meta.get("white_background", True))
    bg = WHITE if white_background else BLACK
    root = manifest.parent
    images, poses, paths = [], [], []
    for i, frame in enumerate(meta["frames"]):
        pose = np.asarray(frame.get("transform_matrix"), dtype=np.float64)
        if pose.shape != (4, 4):
            raise DatasetError(f"frame {i}: transform_matrix must be 4x4, got shape {pose.shape}")
        img_path = _resolve_image(root, frame["file_path"])
        images.append(read_image(img_path, bg))
        poses.append(pose)
        paths.append(frame["file_path"])
    return ViewDataset(images, poses, float(meta["camera_angle_x"]), white_background, paths)


def save_dataset(dataset: ViewDataset, path, manifest_name: str = MANIFEST,
                 image_dir: str = "images", prefix: str = "r") -> Path:
    """Write PNGs plus a manifest; returns the manifest path."""
    root = Path(path)
    (root / image_dir).mkdir(parents=True, exist_ok=True)
    frames = []
    for i, (img, pose) in enumerate(zip(dataset.images, dataset.poses)):
        rel = f"./{image_dir}/{prefix}_{i:03d}"
        write_image(root / f"{rel}.png", img)
        frames.append({"file_path": rel, "transform_matrix": np.asarray(pose).tolist()})
    w, h = dataset.resolution
    meta = {
        "camera_angle_x": dataset.camera_angle_x,
        "white_background": dataset.white_background,
        "w": w,
        "h": h,
        "frames": frames,
    }
    out = root / manifest_name
    out.write_text(json.dumps(meta, indent=2))
    return out


def load_poses(path) -> tuple[list[Camera], list[str]]:
    """Cameras from a poses file: a manifest whose frames need no images.

    Resolution comes from top-level ``w``/``h``.
    """
    path = Path(path)
    try:
        meta = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read poses file {path}: {exc}") from exc
    for key in ("camera_angle_x", "w", "h", "frames"):
        if key not in meta:
            raise DatasetError(f"poses file {path} is missing '{key}'")
    cams, names = [], []
    for i, frame in enumerate(meta["frames"]):
        pose = np.asarray(frame.get("transform_matrix"), dtype=np.float64)
        if pose.shape != (4, 4):
            raise DatasetError(f"frame {i}: transform_matrix must be 4x4, got shape {pose.shape}")
        cams.append(Camera(int(meta["w"]), int(meta["h"]), float(meta["camera_angle_x"]), pose))
        names.append(frame.get("file_path", f"view_{i:03d}"))
    return cams, names


def save_poses(cameras: list[Camera], path) -> None:
    if not cameras:
        raise DatasetError("no cameras to save")
    c0 = cameras[0]
    meta = {
        "camera_angle_x": c0.camera_angle_x,
        "w": c0.width,
        "h": c0.height,
        "frames": [{"file_path": f"view_{i:03d}", "transform_matrix": c.pose.tolist()}
                   for i, c in enumerate(cameras)],
    }
    Path(path).write_text(json.dumps(meta, indent=2))
