"""Ground-truth scene generators.

A 2D style image becomes a one-voxel-thick plane of colored voxels in the middle
of the unit cube and is rendered from many viewpoints like any 3D scene. The
analytic cube and sphere scenes are flat-shaded fixtures with closed-form
renders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .datasets import ViewDataset
from .volume_renderer import WHITE, Camera, generate_rays

CENTER = (0.5, 0.5, 0.5)


def look_at(eye, target=CENTER, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world pose at ``eye`` whose -z axis points at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-6:
        # looking along the up axis; any perpendicular right vector will do
        right = np.cross(forward, (0.0, 1.0, 0.0) if abs(forward[1]) < 0.9 else (1.0, 0.0, 0.0))
    right /= np.linalg.norm(right)
    true_up = np.cross(right, forward)
    pose = np.eye(4)
    pose[:3, 0], pose[:3, 1], pose[:3, 2], pose[:3, 3] = right, true_up, -forward, eye
    return pose


def sample_hemisphere_poses(n: int, radius: float, center=CENTER,
                            rng: np.random.Generator | None = None, *, width: int = 64,
                            height: int | None = None, camera_angle_x: float = 0.7,
                            min_elevation_deg: float = 15.0, max_elevation_deg: float = 90.0,
                            up=(0.0, 1.0, 0.0)) -> list[Camera]:
    """Cameras on the +z hemisphere around ``center``, all looking at it.

    Positions are uniform by area on the spherical zone between the elevation
    limits (elevation measured from the xy-plane).
    """
    if n < 1 or not radius > 0:
        raise ValueError("need n >= 1 and radius > 0")
    rng = rng if rng is not None else np.random.default_rng(0)
    lo, hi = np.sin(np.radians([min_elevation_deg, max_elevation_deg]))
    zs = rng.uniform(lo, hi, size=n)
    az = rng.uniform(0.0, 2 * np.pi, size=n)
    c = np.asarray(center, dtype=np.float64)
    cams = []
    for z, a in zip(zs, az):
        ring = np.sqrt(max(0.0, 1.0 - z * z))
        eye = c + radius * np.array([ring * np.cos(a), ring * np.sin(a), z])
        cams.append(Camera(width, height or width, camera_angle_x, look_at(eye, c, up)))
    return cams


def orbit_poses(n: int, radius: float, center=CENTER, *, elevation_deg: float = 30.0,
                start_deg: float = 0.0, step_deg: float = 5.0, width: int = 64,
                height: int | None = None, camera_angle_x: float = 0.7) -> list[Camera]:
    """An evenly stepped azimuth arc at fixed elevation (a camera path)."""
    c = np.asarray(center, dtype=np.float64)
    e = np.radians(elevation_deg)
    cams = []
    for i in range(n):
        a = np.radians(start_deg + i * step_deg)
        eye = c + radius * np.array([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)])
        cams.append(Camera(width, height or width, camera_angle_x, look_at(eye, c)))
    return cams


def _slab_entry(origins, dirs, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0, t1 = (lo - origins) * inv, (hi - origins) * inv
    tmin = np.where(np.isnan(t0), -np.inf, np.minimum(t0, t1))
    tmax = np.where(np.isnan(t1), np.inf, np.maximum(t0, t1))
    t_in, t_out = tmin.max(axis=-1), tmax.min(axis=-1)
    axis = tmin.argmax(axis=-1)
    hit = (t_out >= t_in) & (t_out > 0)
    return np.maximum(t_in, 0.0), axis, hit


@dataclass
class VoxelPlaneScene:
    colors: np.ndarray  # (rows, cols, 3); row 0 is the top (+y) of the plane
    voxel_size: float
    center: tuple[float, float, float] = CENTER

    @property
    def shape(self) -> tuple[int, int]:
        return self.colors.shape[0], self.colors.shape[1]

    @property
    def box(self):
        rows, cols = self.shape
        c = np.asarray(self.center, dtype=np.float64)
        half = 0.5 * self.voxel_size * np.array([cols, rows, 1.0])
        return c - half, c + half

    def voxel_centers(self) -> np.ndarray:
        rows, cols = self.shape
        lo, hi = self.box
        r, k = np.mgrid[:rows, :cols]
        x = lo[0] + (k + 0.5) * self.voxel_size
        y = hi[1] - (r + 0.5) * self.voxel_size
        z = np.full_like(x, self.center[2], dtype=np.float64)
        return np.stack([x, y, z], axis=-1).reshape(-1, 3)


def resample_image(image: np.ndarray, max_size: int) -> np.ndarray:
    """Area-downsample so the long edge is at most ``max_size``; aspect preserved."""
    h, w = image.shape[:2]
    if max(h, w) <= max_size:
        return image
    scale = max_size / max(h, w)
    size = (max(1, round(w * scale)), max(1, round(h * scale)))
    chans = [np.asarray(Image.fromarray(image[..., c].astype(np.float32), mode="F")
                        .resize(size, Image.Resampling.BOX)) for c in range(3)]
    return np.clip(np.stack(chans, axis=-1).astype(np.float64), 0.0, 1.0)


def image_to_voxel_scene(image, max_size: int = 128, span: float = 0.8,
                         center=CENTER) -> VoxelPlaneScene:
    """One voxel per pixel on a z-normal plane whose long edge spans ``span``."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] == 0 or img.shape[1] == 0 or img.shape[2] < 3:
        raise ValueError("style image must be a non-empty (H, W, 3) array")
    img = np.clip(img[..., :3], 0.0, 1.0)
    img = resample_image(img, max_size)
    voxel = span / max(img.shape[:2])
    return VoxelPlaneScene(img, voxel, tuple(float(c) for c in center))


def render_voxel_scene(scene: VoxelPlaneScene, camera: Camera, background=WHITE) -> np.ndarray:
    """Color of the first voxel each pixel ray enters, else the background."""
    origins, dirs = generate_rays(camera)
    lo, hi = scene.box
    t, _, hit = _slab_entry(origins, dirs, lo, hi)
    p = origins + t[:, None] * dirs
    rows, cols = scene.shape
    col = np.clip(np.floor((p[:, 0] - lo[0]) / scene.voxel_size), 0, cols - 1).astype(int)
    row = np.clip(np.floor((hi[1] - p[:, 1]) / scene.voxel_size), 0, rows - 1).astype(int)
    out = np.broadcast_to(np.asarray(background, dtype=np.float64), (len(dirs), 3)).copy()
    out[hit] = scene.colors[row[hit], col[hit]]
    return out.reshape(camera.height, camera.width, 3)


def fronto_parallel_camera(scene: VoxelPlaneScene, distance: float = 1.0) -> Camera:
    """A +z camera whose pixel centers land exactly on voxel centers."""
    rows, cols = scene.shape
    lo, hi = scene.box
    half_width = 0.5 * cols * scene.voxel_size
    fov = 2.0 * np.arctan(half_width / distance)
    pose = np.eye(4)
    pose[:3, 3] = (scene.center[0], scene.center[1], hi[2] + distance)
    return Camera(cols, rows, fov, pose)


# face order: -x, +x, -y, +y, -z, +z
CUBE_FACE_COLORS = (
    (0.1, 0.8, 0.8),
    (0.9, 0.15, 0.1),
    (0.8, 0.2, 0.8),
    (0.2, 0.75, 0.2),
    (0.9, 0.8, 0.1),
    (0.15, 0.25, 0.85),
)


@dataclass
class ColoredCube:
    center: tuple[float, float, float] = CENTER
    half_size: float = 0.3
    face_colors: tuple = CUBE_FACE_COLORS

    def render(self, camera: Camera, background=WHITE) -> np.ndarray:
        origins, dirs = generate_rays(camera)
        c = np.asarray(self.center)
        t, axis, hit = _slab_entry(origins, dirs, c - self.half_size, c + self.half_size)
        # the entry face's sign is opposite to the ray direction along the entry axis
        sign_positive = dirs[np.arange(len(dirs)), axis] < 0
        face = 2 * axis + sign_positive
        colors = np.asarray(self.face_colors, dtype=np.float64)
        out = np.broadcast_to(np.asarray(background, dtype=np.float64), (len(dirs), 3)).copy()
        out[hit] = colors[face[hit]]
        return out.reshape(camera.height, camera.width, 3)


# octant color index = 4*(x>c) + 2*(y>c) + (z>c)
SPHERE_OCTANT_COLORS = (
    (0.85, 0.2, 0.2), (0.2, 0.8, 0.3), (0.2, 0.3, 0.85), (0.9, 0.8, 0.2),
    (0.8, 0.3, 0.8), (0.2, 0.8, 0.8), (0.95, 0.55, 0.2), (0.5, 0.5, 0.5),
)


@dataclass
class ColoredSphere:
    center: tuple[float, float, float] = CENTER
    radius: float = 0.3
    octant_colors: tuple = SPHERE_OCTANT_COLORS

    def render(self, camera: Camera, background=WHITE) -> np.ndarray:
        origins, dirs = generate_rays(camera)
        oc = origins - np.asarray(self.center)
        b = np.sum(oc * dirs, axis=-1)
        disc = b * b - (np.sum(oc * oc, axis=-1) - self.radius**2)
        hit = disc >= 0
        t = -b - np.sqrt(np.where(hit, disc, 0.0))
        hit &= t > 0
        p = oc + t[:, None] * dirs
        octant = 4 * (p[:, 0] > 0) + 2 * (p[:, 1] > 0) + (p[:, 2] > 0)
        colors = np.asarray(self.octant_colors, dtype=np.float64)
        out = np.broadcast_to(np.asarray(background, dtype=np.float64), (len(dirs), 3)).copy()
        out[hit] = colors[octant[hit]]
        return out.reshape(camera.height, camera.width, 3)


SyntheticScene = ColoredCube | ColoredSphere


def make_synthetic_dataset(scene, n_views: int, resolution: int,
                           rng: np.random.Generator | None = None, *, radius: float = 2.0,
                           camera_angle_x: float = 0.7, white_background: bool = True,
                           up=(0.0, 1.0, 0.0)) -> ViewDataset:
    """Render an analytic scene (or a voxel plane) from random hemisphere poses."""
    rng = rng if rng is not None else np.random.default_rng(0)
    center = getattr(scene, "center", CENTER)
    cams = sample_hemisphere_poses(n_views, radius, center, rng, width=resolution,
                                   camera_angle_x=camera_angle_x, up=up)
    bg = WHITE if white_background else (0.0, 0.0, 0.0)
    if isinstance(scene, VoxelPlaneScene):
        images = [render_voxel_scene(scene, c, bg) for c in cams]
    else:
        images = [scene.render(c, bg) for c in cams]
    return ViewDataset(images, [c.pose for c in cams], camera_angle_x, white_background)


def make_style_scene_dataset(image, n_views: int = 64, resolution: int = 64,
                             rng: np.random.Generator | None = None, *, radius: float = 1.2,
                             camera_angle_x: float = 0.7, max_size: int = 128) -> ViewDataset:
    """Views of a style image turned into a voxel plane, from its image-facing side."""
    scene = image_to_voxel_scene(image, max_size=max_size)
    return make_synthetic_dataset(scene, n_views, resolution, rng, radius=radius,
                                  camera_angle_x=camera_angle_x, white_background=True)


def procedural_style_image(size: int = 32, seed: int = 0) -> np.ndarray:
    """A smooth, colorful test pattern used when no style image is supplied."""
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[:size, :size] / size
    freq = rng.uniform(0.8, 1.6, size=3)
    phase = rng.uniform(0, 2 * np.pi, size=3)
    r = 0.5 + 0.45 * np.sin(2 * np.pi * freq[0] * x + phase[0])
    g = 0.5 + 0.45 * np.sin(2 * np.pi * freq[1] * (x + y) + phase[1])
    b = 0.5 + 0.45 * np.cos(2 * np.pi * freq[2] * np.hypot(x - 0.5, y - 0.5) * 2 + phase[2])
    return np.stack([r, g, b], axis=-1)
