"""Depth-warped multi-view consistency scoring.

View ``j`` is warped into view ``i`` using the expected depth rendered for view
``i``; the photometric disagreement is measured only where the reprojection is
valid. The error is a masked RMSE, a photometric stand-in for a perceptual
metric.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .volume_renderer import Camera, RenderOutput, generate_rays

DEPTH_TOLERANCE = 0.02
OPACITY_THRESHOLD = 0.5
DEFAULT_GAPS = (5, 15)
METRIC_NOTE = "masked RMSE over depth-warped pixels (photometric substitute for LPIPS)"


@dataclass
class WarpResult:
    warped: np.ndarray  # (H, W, 3), zero outside the mask
    mask: np.ndarray  # (H, W) bool
    coords: np.ndarray  # (H, W, 2) continuous (col, row) positions in view j


def bilinear_sample(image: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample at continuous array coordinates (``x`` = column index); inputs must be in range."""
    h, w = image.shape[:2]
    x0 = np.clip(np.floor(x).astype(int), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(y).astype(int), 0, max(h - 2, 0))
    x1, y1 = np.minimum(x0 + 1, w - 1), np.minimum(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    if image.ndim == 3:
        fx, fy = fx[..., None], fy[..., None]
    top = image[y0, x0] * (1 - fx) + image[y0, x1] * fx
    bottom = image[y1, x0] * (1 - fx) + image[y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def backward_warp(image_j, depth_i, camera_i: Camera, camera_j: Camera, depth_j,
                  tolerance: float = DEPTH_TOLERANCE, opacity_i=None,
                  opacity_threshold: float = OPACITY_THRESHOLD) -> WarpResult:
    """Pull view ``j`` into view ``i`` through view ``i``'s depth map.

    A pixel is valid when it reprojects inside view ``j``, the reprojected
    distance agrees with view ``j``'s depth within ``tolerance`` and (if given)
    view ``i``'s opacity exceeds ``opacity_threshold``.
    """
    image_j = np.asarray(image_j, dtype=np.float64)
    depth_i = np.asarray(depth_i, dtype=np.float64)
    depth_j = np.asarray(depth_j, dtype=np.float64)
    h, w = depth_i.shape
    if (image_j.shape[:2] != (h, w) or depth_j.shape != (h, w)
            or (camera_i.height, camera_i.width) != (h, w)
            or (camera_j.height, camera_j.width) != (h, w)):
        raise ValueError("images, depths and cameras must share one resolution")
    origins, dirs = generate_rays(camera_i)
    points = origins + depth_i.reshape(-1, 1) * dirs
    uv, z = camera_j.project(points)
    x, y = uv[:, 0] - 0.5, uv[:, 1] - 0.5
    slack = 1e-6
    inside = ((z > 0) & (x >= -slack) & (x <= w - 1 + slack)
              & (y >= -slack) & (y <= h - 1 + slack))
    x = np.where(inside, np.clip(x, 0, w - 1), 0.0)
    y = np.where(inside, np.clip(y, 0, h - 1), 0.0)
    warped = bilinear_sample(image_j, x, y)
    sampled_depth = bilinear_sample(depth_j, x, y)
    dist = np.linalg.norm(points - camera_j.origin, axis=-1)
    mask = inside & (np.abs(dist - sampled_depth) < tolerance)
    if opacity_i is not None:
        mask &= np.asarray(opacity_i).reshape(-1) > opacity_threshold
    warped[~mask] = 0.0
    return WarpResult(warped.reshape(h, w, 3), mask.reshape(h, w), uv.reshape(h, w, 2))


def masked_error(image_i, warp: WarpResult) -> float:
    """RMS rgb difference over the valid pixels."""
    if not warp.mask.any():
        raise ValueError("warp mask is empty")
    diff = np.asarray(image_i, dtype=np.float64)[warp.mask] - warp.warped[warp.mask]
    return float(np.sqrt(np.mean(diff * diff)))


@dataclass
class PosedRender:
    camera: Camera
    render: RenderOutput


def pair_error(a: PosedRender, b: PosedRender, tolerance: float = DEPTH_TOLERANCE,
               opacity_threshold: float = OPACITY_THRESHOLD) -> float | None:
    """Warp error averaged over both directions; ``None`` if neither has valid pixels."""
    errs = []
    for src, dst in ((a, b), (b, a)):
        warp = backward_warp(dst.render.rgb, src.render.depth, src.camera, dst.camera,
                             dst.render.depth, tolerance, src.render.opacity, opacity_threshold)
        if warp.mask.any():
            errs.append(masked_error(src.render.rgb, warp))
    if not errs:
        return None
    return 0.5 * (errs[0] + errs[-1])


@dataclass
class GapScore:
    gap: int
    pairs: int
    mean: float
    std: float
    skipped: int = 0


def consistency_score(renders: list[PosedRender], gaps=DEFAULT_GAPS,
                      tolerance: float = DEPTH_TOLERANCE,
                      opacity_threshold: float = OPACITY_THRESHOLD) -> dict[int, GapScore]:
    """Mean warp error over all index pairs ``(i, i + gap)`` for each gap."""
    gaps = tuple(int(g) for g in gaps)
    if not gaps or min(gaps) < 1:
        raise ValueError("gaps must be positive integers")
    if len(renders) < max(gaps) + 1:
        raise ValueError(f"need at least {max(gaps) + 1} renders for gap {max(gaps)}, "
                         f"got {len(renders)}")
    out = {}
    for gap in gaps:
        errors, skipped = [], 0
        for i in range(len(renders) - gap):
            e = pair_error(renders[i], renders[i + gap], tolerance, opacity_threshold)
            if e is None:
                skipped += 1
            else:
                errors.append(e)
        if errors:
            # fsum makes the reduction independent of pair order
            mean = math.fsum(errors) / len(errors)
            std = math.sqrt(math.fsum((e - mean) ** 2 for e in errors) / len(errors))
        else:
            mean = std = float("nan")
        out[gap] = GapScore(gap, len(errors), mean, std, skipped)
    return out


def format_report(scores: dict[int, GapScore], title: str = "consistency") -> str:
    lines = [f"# {title}", f"# metric: {METRIC_NOTE}",
             f"{'gap':>5} {'pairs':>6} {'mean':>12} {'std':>12}"]
    for s in scores.values():
        lines.append(f"{s.gap:>5} {s.pairs:>6} {s.mean:>12.6f} {s.std:>12.6f}")
    return "\n".join(lines) + "\n"


def write_report(scores: dict[int, GapScore], out_dir, stem: str = "consistency",
                 title: str = "consistency") -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    txt = out_dir / f"{stem}.txt"
    js = out_dir / f"{stem}.json"
    txt.write_text(format_report(scores, title))
    js.write_text(json.dumps({
        "metric": METRIC_NOTE,
        "gaps": [{"gap": s.gap, "pairs": s.pairs, "mean": s.mean, "std": s.std,
                  "skipped": s.skipped} for s in scores.values()],
    }, indent=2))
    return txt, js
