"""Pinhole rays, stratified sampling, emission-absorption compositing, Huber loss.

Cameras follow the NeRF-Synthetic convention: the pose is camera-to-world, the
camera looks along its local -z axis with +y up and +x to the right.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .radiance_model import BranchId, FeatureFn, RadianceModel, forward_samples
from .sh_encoder import sh_encode

DEPTH_EPS = 1e-6
# rays whose in-bounds segment is shorter than this are treated as misses
MIN_SEGMENT = 1e-6

WHITE = (1.0, 1.0, 1.0)
BLACK = (0.0, 0.0, 0.0)


@dataclass
class Camera:
    width: int
    height: int
    camera_angle_x: float
    pose: np.ndarray  # 4x4 camera-to-world

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64)
        if self.width < 1 or self.height < 1:
            raise ValueError("camera width and height must be >= 1")
        if self.pose.shape != (4, 4) or not np.all(np.isfinite(self.pose)):
            raise ValueError("pose must be a finite 4x4 matrix")
        rot = self.pose[:3, :3]
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-4):
            raise ValueError("pose rotation block is not orthonormal")
        if not 0 < self.camera_angle_x < np.pi:
            raise ValueError("camera_angle_x must be in (0, pi)")

    @property
    def focal(self) -> float:
        return 0.5 * self.width / np.tan(0.5 * self.camera_angle_x)

    @property
    def origin(self) -> np.ndarray:
        return self.pose[:3, 3]

    def pixel_grid(self) -> np.ndarray:
        """All (col, row) pixel coordinates in row-major image order."""
        rows, cols = np.mgrid[: self.height, : self.width]
        return np.stack([cols.ravel(), rows.ravel()], axis=-1)

    def project(self, points: np.ndarray):
        """World points to continuous pixel coords (col, row) and camera-space depth along -z."""
        rot, t = self.pose[:3, :3], self.pose[:3, 3]
        local = (np.asarray(points) - t) @ rot
        z = -local[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.focal * local[..., 0] / z + 0.5 * self.width
            v = -self.focal * local[..., 1] / z + 0.5 * self.height
        return np.stack([u, v], axis=-1), z


@dataclass
class Rays:
    """A batch of rays; ``near``/``far`` bound the sampled segment."""

    origins: np.ndarray
    directions: np.ndarray
    near: np.ndarray
    far: np.ndarray

    def __len__(self):
        return len(self.origins)

    def subset(self, idx) -> "Rays":
        return Rays(self.origins[idx], self.directions[idx], self.near[idx], self.far[idx])


@dataclass
class RenderOutput:
    rgb: np.ndarray  # (H, W, 3)
    depth: np.ndarray  # (H, W)
    opacity: np.ndarray  # (H, W)


@dataclass
class RenderConfig:
    n_samples: int = 128
    background: tuple[float, float, float] = WHITE
    deterministic: bool = True
    chunk: int = 4096
    workers: int | None = None
    bounds: tuple[tuple[float, float, float], tuple[float, float, float]] = (
        (0.0, 0.0, 0.0),
        (1.0, 1.0, 1.0),
    )
    seed: int = 0

    def resolved_workers(self) -> int:
        if self.workers is not None:
            return max(1, int(self.workers))
        return max(1, int(os.environ.get("VOXELSTYLE_THREADS", "1")))


def generate_rays(camera: Camera, pixels=None):
    """Unit-direction rays through pixel centers; ``pixels`` is ``(N, 2)`` of (col, row)."""
    px = camera.pixel_grid() if pixels is None else np.atleast_2d(np.asarray(pixels))
    if px.shape[-1] != 2:
        raise ValueError("pixels must be (col, row) pairs")
    if (np.any(px < 0) or np.any(px[:, 0] >= camera.width)
            or np.any(px[:, 1] >= camera.height)):
        raise IndexError("pixel outside image bounds")
    f = camera.focal
    local = np.stack([
        (px[:, 0] + 0.5 - 0.5 * camera.width) / f,
        -(px[:, 1] + 0.5 - 0.5 * camera.height) / f,
        -np.ones(len(px)),
    ], axis=-1)
    dirs = local @ camera.pose[:3, :3].T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(camera.origin, dirs.shape).copy()
    return origins, dirs


def intersect_box(origins, directions, lo=(0, 0, 0), hi=(1, 1, 1)):
    """Slab test; returns (near, far) with near clipped at 0. Misses have near >= far."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / directions
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    tmin = np.where(np.isnan(t0), -np.inf, np.minimum(t0, t1))
    tmax = np.where(np.isnan(t1), np.inf, np.maximum(t0, t1))
    near = np.maximum(tmin.max(axis=-1), 0.0)
    far = tmax.min(axis=-1)
    return near, far


def make_rays(camera: Camera, pixels=None, bounds=((0, 0, 0), (1, 1, 1))) -> Rays:
    origins, dirs = generate_rays(camera, pixels)
    near, far = intersect_box(origins, dirs, *bounds)
    return Rays(origins, dirs, near, far)


def sample_points(near, far, n_samples: int, rng: np.random.Generator | None = None):
    """Stratified distances, one per equal sub-interval of [near, far].

    With ``rng=None`` the sub-interval midpoints are returned. Scalar or
    per-ray ``near``/``far`` are accepted; output has a trailing sample axis.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    near = np.asarray(near, dtype=np.float64)
    far = np.asarray(far, dtype=np.float64)
    shape = np.broadcast_shapes(near.shape, far.shape) + (n_samples,)
    if rng is None:
        u = np.broadcast_to(np.full(n_samples, 0.5), shape)
    else:
        u = rng.random(shape)
    k = np.arange(n_samples)
    frac = (k + u) / n_samples
    return near[..., None] + (far - near)[..., None] * frac


@dataclass
class CompositeCache:
    alpha: np.ndarray
    trans: np.ndarray  # transmittance before each sample
    weights: np.ndarray
    deltas: np.ndarray
    rgbs: np.ndarray
    final_trans: np.ndarray
    background: np.ndarray


def composite(sigmas, rgbs, ts, t_far, background=BLACK, return_cache: bool = False):
    """Emission-absorption quadrature along each ray (trailing sample axis).

    Returns ``(color, expected_depth, opacity)`` and optionally the cache needed
    by :func:`composite_backward`.
    """
    sigmas = np.asarray(sigmas)
    rgbs = np.asarray(rgbs)
    ts = np.asarray(ts)
    if sigmas.shape != ts.shape or rgbs.shape != sigmas.shape + (3,):
        raise ValueError("sigmas, rgbs and ts must describe the same samples")
    if np.any(np.diff(ts, axis=-1) <= 0):
        raise ValueError("sample distances must be strictly increasing")
    t_far = np.asarray(t_far, dtype=ts.dtype)
    deltas = np.diff(ts, axis=-1, append=t_far[..., None] if t_far.ndim else
                     np.full(ts.shape[:-1] + (1,), t_far))
    tau = sigmas * deltas
    alpha = -np.expm1(-tau)
    # exclusive cumulative sum keeps transmittance exact for long rays
    acc = np.cumsum(tau, axis=-1)
    trans = np.exp(-(acc - tau))
    weights = trans * alpha
    final_trans = np.exp(-acc[..., -1])
    bg = np.asarray(background, dtype=rgbs.dtype)
    color = (weights[..., None] * rgbs).sum(axis=-2) + final_trans[..., None] * bg
    opacity = weights.sum(axis=-1)
    depth = (weights * ts).sum(axis=-1) / np.maximum(opacity, DEPTH_EPS)
    out = (color, depth, opacity)
    if return_cache:
        return out, CompositeCache(alpha, trans, weights, deltas, rgbs, final_trans, bg)
    return out


def composite_backward(cache: CompositeCache, dcolor):
    """Gradients of ``sum(dcolor * color)`` w.r.t. sigmas and rgbs."""
    dcolor = np.asarray(dcolor)
    drgbs = cache.weights[..., None] * dcolor[..., None, :]
    # contribution of everything behind sample i, including the background
    per_sample = (cache.weights[..., None] * cache.rgbs * dcolor[..., None, :]).sum(axis=-1)
    bg_term = cache.final_trans * (cache.background * dcolor).sum(axis=-1)
    behind = np.cumsum(per_sample[..., ::-1], axis=-1)[..., ::-1] - per_sample + bg_term[..., None]
    trans_after = cache.trans * (1.0 - cache.alpha)
    own = trans_after * (cache.rgbs * dcolor[..., None, :]).sum(axis=-1)
    dtau = own - behind
    return dtau * cache.deltas, drgbs


def huber_loss(pred, target, delta: float = 0.1) -> float:
    """Huber penalty per component, summed."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    rel = np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64))
    per = np.where(rel <= delta, 0.5 * rel * rel, delta * (rel - 0.5 * delta))
    return float(per.sum())


def huber_grad(pred, target, delta: float = 0.1) -> np.ndarray:
    if not delta > 0:
        raise ValueError("delta must be positive")
    diff = np.asarray(pred) - np.asarray(target)
    return np.clip(diff, -delta, delta)


def render_rays(model: RadianceModel, branch: BranchId, rays: Rays, config: RenderConfig,
                feature_fn: FeatureFn | None = None, rng: np.random.Generator | None = None):
    """Render a ray batch; rays that miss the bounds see only the background."""
    n = len(rays)
    dtype = model.dtype
    bg = np.asarray(config.background, dtype=dtype)
    color = np.broadcast_to(bg, (n, 3)).astype(dtype)
    depth = np.zeros(n, dtype=dtype)
    opacity = np.zeros(n, dtype=dtype)
    hit = np.flatnonzero(rays.far > rays.near + MIN_SEGMENT)
    if len(hit) == 0:
        return color, depth, opacity
    r = rays.subset(hit)
    ts = sample_points(r.near, r.far, config.n_samples, None if config.deterministic else rng)
    pts = r.origins[:, None, :] + ts[..., None] * r.directions[:, None, :]
    dir_enc = sh_encode(r.directions).astype(dtype)
    dir_enc = np.repeat(dir_enc, config.n_samples, axis=0)
    sigma, rgb, _ = forward_samples(model, branch, pts.reshape(-1, 3), dir_enc, feature_fn)
    s = config.n_samples
    c, d, o = composite(sigma.reshape(-1, s), rgb.reshape(-1, s, 3), ts, r.far, bg)
    color[hit], depth[hit], opacity[hit] = c, d, o
    return color, depth, opacity


def render_image(model: RadianceModel, branch: BranchId, camera: Camera,
                 config: RenderConfig = RenderConfig(),
                 feature_fn: FeatureFn | None = None) -> RenderOutput:
    """Render every pixel of ``camera``; tiles of rays may run on worker threads."""
    rays = make_rays(camera, bounds=config.bounds)
    n = len(rays)
    starts = list(range(0, n, config.chunk))
    rng = None if config.deterministic else np.random.default_rng(config.seed)
    rngs = [None if rng is None else np.random.default_rng(rng.integers(2**63)) for _ in starts]

    def run(i):
        sl = slice(starts[i], starts[i] + config.chunk)
        return render_rays(model, branch, rays.subset(sl), config, feature_fn, rngs[i])

    workers = config.resolved_workers()
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, range(len(starts))))
    else:
        parts = [run(i) for i in range(len(starts))]
    h, w = camera.height, camera.width
    color = np.concatenate([p[0] for p in parts]).reshape(h, w, 3)
    depth = np.concatenate([p[1] for p in parts]).reshape(h, w)
    opacity = np.concatenate([p[2] for p in parts]).reshape(h, w)
    return RenderOutput(color, depth, opacity)
