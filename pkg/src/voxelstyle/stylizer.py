"""Inference-time stylization with AdaIN on position-encoder features.

Reference statistics come from the position-encoder features of each branch
sampled at the centers of an ``N_V^3`` voxel lattice. At render time the
source branch's features are renormalized toward the target branch's
statistics before the shared color MLP. Density is always computed from the
unadjusted features, so geometry does not change.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .radiance_model import BranchId, RadianceModel, position_forward
from .volume_renderer import Camera, RenderConfig, RenderOutput, render_image

STD_FLOOR = 1e-6
DEFAULT_MASK_THRESHOLD = 0.01
MOMENTS_FORMAT = "voxelstyle-moments"
MOMENTS_VERSION = 1


@dataclass(frozen=True)
class VoxelGridSpec:
    resolution: int = 128
    bounds: tuple[tuple[float, float, float], tuple[float, float, float]] = (
        (0.0, 0.0, 0.0),
        (1.0, 1.0, 1.0),
    )

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError("voxel resolution must be >= 2")

    @property
    def count(self) -> int:
        return self.resolution**3

    def centers(self, start: int = 0, stop: int | None = None) -> np.ndarray:
        """Voxel centers for flat indices ``[start, stop)``; x varies slowest."""
        n = self.resolution
        stop = self.count if stop is None else stop
        idx = np.arange(start, stop)
        ijk = np.stack([idx // (n * n), (idx // n) % n, idx % n], axis=-1)
        lo, hi = np.asarray(self.bounds[0], float), np.asarray(self.bounds[1], float)
        return lo + (ijk + 0.5) / n * (hi - lo)


@dataclass
class VoxelFeatureGrid:
    features: np.ndarray  # (N_V^3, geom_dim)
    densities: np.ndarray  # (N_V^3,)


@dataclass
class FeatureMoments:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.mu.shape != self.sigma.shape:
            raise ValueError("mu and sigma must have the same shape")
        if not (np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.sigma))):
            raise ValueError("moments must be finite")
        if np.any(self.sigma <= 0):
            raise ValueError("sigma must be positive")

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "sigma": self.sigma.tolist()}

    @classmethod
    def from_dict(cls, d) -> "FeatureMoments":
        return cls(np.array(d["mu"], dtype=np.float64), np.array(d["sigma"], dtype=np.float64))


class Direction(str, Enum):
    CONTENT_TO_STYLE = "content-to-style"
    STYLE_TO_CONTENT = "style-to-content"

    @property
    def source(self) -> BranchId:
        return BranchId.CONTENT if self is Direction.CONTENT_TO_STYLE else BranchId.STYLE

    @property
    def target(self) -> BranchId:
        return BranchId.STYLE if self is Direction.CONTENT_TO_STYLE else BranchId.CONTENT


@dataclass(frozen=True)
class StyleBlend:
    alpha: float = 1.0
    direction: Direction = Direction.CONTENT_TO_STYLE

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        object.__setattr__(self, "direction", Direction(self.direction))


def extract_voxel_features(model: RadianceModel, branch: BranchId,
                           spec: VoxelGridSpec = VoxelGridSpec(),
                           chunk: int = 1 << 16) -> VoxelFeatureGrid:
    feats = np.empty((spec.count, model.spec.geom_dim), dtype=model.dtype)
    dens = np.empty(spec.count, dtype=model.dtype)
    for start in range(0, spec.count, chunk):
        stop = min(start + chunk, spec.count)
        dens[start:stop], feats[start:stop] = position_forward(model, branch,
                                                               spec.centers(start, stop))
    return VoxelFeatureGrid(feats, dens)


def _select(features, densities, density_threshold):
    if density_threshold is None:
        return features
    keep = densities > density_threshold
    return features[keep]


def compute_moments(grid: VoxelFeatureGrid, density_threshold: float | None = None) -> FeatureMoments:
    """Per-channel mean and population std, std floored at ``STD_FLOOR``.

    With ``density_threshold`` only voxels whose density exceeds it are used.
    """
    f = _select(grid.features, grid.densities, density_threshold).astype(np.float64)
    if len(f) == 0:
        raise ValueError("no voxels selected for moment computation")
    mu = f.mean(axis=0)
    sigma = np.sqrt(((f - mu) ** 2).mean(axis=0))
    return FeatureMoments(mu, np.maximum(sigma, STD_FLOOR))


def voxel_moments(model: RadianceModel, branch: BranchId, spec: VoxelGridSpec = VoxelGridSpec(),
                  density_threshold: float | None = None, chunk: int = 1 << 16) -> FeatureMoments:
    """Moments of a voxel grid without materializing it (chunked, fixed merge order)."""
    count, mean, m2 = 0, None, None
    for start in range(0, spec.count, chunk):
        stop = min(start + chunk, spec.count)
        dens, geom = position_forward(model, branch, spec.centers(start, stop))
        f = _select(geom, dens, density_threshold).astype(np.float64)
        if len(f) == 0:
            continue
        n_b = len(f)
        mean_b = f.mean(axis=0)
        m2_b = ((f - mean_b) ** 2).sum(axis=0)
        if mean is None:
            count, mean, m2 = n_b, mean_b, m2_b
            continue
        total = count + n_b
        delta = mean_b - mean
        mean = mean + delta * (n_b / total)
        m2 = m2 + m2_b + delta**2 * (count * n_b / total)
        count = total
    if mean is None:
        raise ValueError("no voxels selected for moment computation")
    return FeatureMoments(mean, np.maximum(np.sqrt(m2 / count), STD_FLOOR))


def adain(f, content: FeatureMoments, style: FeatureMoments) -> np.ndarray:
    """Renormalize features from the content statistics to the style statistics."""
    f = np.asarray(f, dtype=np.float64)
    return style.sigma * (f - content.mu) / content.sigma + style.mu


def adain_blend(f, content: FeatureMoments, style: FeatureMoments, alpha: float) -> np.ndarray:
    """``(1 - alpha) * f + alpha * adain(f)``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    f = np.asarray(f, dtype=np.float64)
    return (1.0 - alpha) * f + alpha * adain(f, content, style)


@dataclass
class MomentsPair:
    content: FeatureMoments
    style: FeatureMoments
    voxel_res: int | None = None
    density_threshold: float | None = None

    def of(self, branch: BranchId) -> FeatureMoments:
        return self.content if BranchId(branch) is BranchId.CONTENT else self.style


def compute_moments_pair(model: RadianceModel, spec: VoxelGridSpec = VoxelGridSpec(),
                         density_threshold: float | None = None) -> MomentsPair:
    return MomentsPair(voxel_moments(model, BranchId.CONTENT, spec, density_threshold),
                       voxel_moments(model, BranchId.STYLE, spec, density_threshold),
                       spec.resolution, density_threshold)


def stylize_features(f, blend: StyleBlend, moments: MomentsPair) -> np.ndarray:
    d = blend.direction
    return adain_blend(f, moments.of(d.source), moments.of(d.target), blend.alpha)


def render_stylized(model: RadianceModel, camera: Camera, blend: StyleBlend,
                    moments: MomentsPair, config: RenderConfig = RenderConfig()) -> RenderOutput:
    """Render the source branch with its color features moved toward the target."""
    def feature_fn(geom):
        return stylize_features(geom, blend, moments)

    return render_image(model, blend.direction.source, camera, config, feature_fn)


def save_moments(moments: MomentsPair, path) -> None:
    doc = {
        "format": MOMENTS_FORMAT,
        "version": MOMENTS_VERSION,
        "voxel_res": moments.voxel_res,
        "density_threshold": moments.density_threshold,
        "content": moments.content.to_dict(),
        "style": moments.style.to_dict(),
    }
    Path(path).write_text(json.dumps(doc, indent=2))


def load_moments(path) -> MomentsPair:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read moments file {path}: {exc}") from exc
    if doc.get("format") != MOMENTS_FORMAT or doc.get("version") != MOMENTS_VERSION:
        raise ValueError(f"{path} is not a version-{MOMENTS_VERSION} moments file")
    return MomentsPair(FeatureMoments.from_dict(doc["content"]),
                       FeatureMoments.from_dict(doc["style"]),
                       doc.get("voxel_res"), doc.get("density_threshold"))
