"""Joint optimization of the content and style branches.

Both scenes are stepped in the same iteration. Each branch's position encoder
only ever sees gradients from its own scene; the shared color MLP receives the
sum of both.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .datasets import ViewDataset
from .radiance_model import (
    BranchId,
    RadianceModel,
    backward_samples,
    branch_param_names,
    forward_samples,
)
from .sh_encoder import sh_encode
from .volume_renderer import (
    Rays,
    MIN_SEGMENT,
    composite,
    composite_backward,
    huber_grad,
    make_rays,
    sample_points,
)

PSNR_CAP = 99.0


@dataclass
class TrainConfig:
    iterations: int = 20000
    rays_per_batch_per_scene: int = 4096
    lr_hash: float = 1e-2
    lr_mlp: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-15
    huber_delta: float = 0.1
    seed: int = 0
    n_samples: int = 128
    workers: int = 1
    log_every: int = 100
    checkpoint_every: int = 0

    def __post_init__(self):
        for name in ("iterations", "rays_per_batch_per_scene", "lr_hash", "lr_mlp", "eps",
                     "huber_delta", "n_samples", "workers"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("beta1", "beta2"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: dict[str, int] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr, beta1: float = 0.9, beta2: float = 0.99, eps: float = 1e-15) -> None:
    """Bias-corrected Adam, in place, for every tensor named in ``grads``.

    ``lr`` is a float or a mapping from parameter name to learning rate.
    """
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
            state.step[name] = 0
        m, v = state.m[name], state.v[name]
        state.step[name] += 1
        t = state.step[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        rate = lr[name] if isinstance(lr, dict) else lr
        p -= (rate * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype, copy=False)


@dataclass
class RayBatch:
    rays: Rays
    targets: np.ndarray  # (R, 3)
    background: tuple[float, float, float]

    def __len__(self):
        return len(self.rays)


class RayPool:
    """Every pixel ray of a dataset, precomputed for uniform batch sampling."""

    def __init__(self, dataset: ViewDataset, bounds=((0, 0, 0), (1, 1, 1))):
        origins, dirs, near, far, rgb = [], [], [], [], []
        for i, cam in enumerate(dataset.cameras()):
            img = dataset.images[i]
            if img.shape[:2] != (cam.height, cam.width):
                raise ValueError(f"view {i}: image shape {img.shape} inconsistent with camera")
            rays = make_rays(cam, bounds=bounds)
            origins.append(rays.origins)
            dirs.append(rays.directions)
            near.append(rays.near)
            far.append(rays.far)
            rgb.append(img.reshape(-1, 3))
        self.rays = Rays(np.concatenate(origins), np.concatenate(dirs),
                         np.concatenate(near), np.concatenate(far))
        self.targets = np.concatenate(rgb)
        self.background = dataset.background

    def __len__(self):
        return len(self.targets)

    def sample(self, n: int, rng: np.random.Generator) -> RayBatch:
        idx = rng.integers(0, len(self), size=n)
        return RayBatch(self.rays.subset(idx), self.targets[idx], self.background)

    def empty(self) -> RayBatch:
        return self.sample_indices(np.zeros(0, dtype=np.int64))

    def sample_indices(self, idx) -> RayBatch:
        return RayBatch(self.rays.subset(idx), self.targets[idx], self.background)


def _batch_grads(model, branch, batch: RayBatch, ts, n_total, delta, grads):
    """Loss sum over the batch; accumulates gradients of ``loss / n_total``."""
    dtype = model.dtype
    bg = np.asarray(batch.background, dtype=dtype)
    hit = np.flatnonzero(batch.rays.far > batch.rays.near + MIN_SEGMENT)
    pred = np.broadcast_to(bg, (len(batch), 3)).astype(dtype)
    if len(hit):
        rays = batch.rays.subset(hit)
        t = ts[hit]
        s = t.shape[-1]
        pts = (rays.origins[:, None, :] + t[..., None] * rays.directions[:, None, :]).reshape(-1, 3)
        dir_enc = np.repeat(sh_encode(rays.directions).astype(dtype), s, axis=0)
        sigma, rgb, cache = forward_samples(model, branch, pts, dir_enc)
        (color, _, _), ccache = composite(sigma.reshape(-1, s), rgb.reshape(-1, s, 3),
                                          t, rays.far, bg, return_cache=True)
        pred[hit] = color
        dcolor = huber_grad(color, batch.targets[hit].astype(dtype), delta) / n_total
        dsigma, drgb = composite_backward(ccache, dcolor)
        backward_samples(model, cache, dsigma.reshape(-1).astype(dtype),
                         drgb.reshape(-1, 3).astype(dtype), grads)
    rel = np.abs(pred.astype(np.float64) - batch.targets)
    per = np.where(rel <= delta, 0.5 * rel * rel, delta * (rel - 0.5 * delta))
    return float(per.sum())


def _scene_loss_and_grads(model, branch, batch, config, rng):
    """Mean per-ray Huber loss and the gradient dict for one scene's batch."""
    grads = {k: np.zeros_like(model.parameters()[k])
             for k in branch_param_names(model, branch)}
    grads.update({k: np.zeros_like(v) for k, v in model.color_mlp.named("color").items()})
    n = len(batch)
    ts = sample_points(batch.rays.near, batch.rays.far, config.n_samples, rng)
    workers = min(config.workers, n)
    if workers <= 1:
        total = _batch_grads(model, branch, batch, ts, n, config.huber_delta, grads)
        return total / n, grads
    bounds = np.linspace(0, n, workers + 1).astype(int)
    chunks = [np.arange(bounds[i], bounds[i + 1]) for i in range(workers)]

    def work(idx):
        local = {k: np.zeros_like(v) for k, v in grads.items()}
        sub = RayBatch(batch.rays.subset(idx), batch.targets[idx], batch.background)
        return _batch_grads(model, branch, sub, ts[idx], n, config.huber_delta, local), local

    with ThreadPoolExecutor(workers) as pool:
        results = list(pool.map(work, chunks))
    total = 0.0
    for loss, local in results:  # fixed merge order keeps runs reproducible
        total += loss
        for k in grads:
            grads[k] += local[k]
    return total / n, grads


def train_step(model: RadianceModel, content: RayBatch, style: RayBatch, state: AdamState,
               config: TrainConfig, rng: np.random.Generator) -> tuple[float, float]:
    """One joint Adam step; returns the mean per-ray losses (content, style).

    A scene with an empty batch contributes nothing, and its branch parameters
    are not stepped at all.
    """
    if len(content) == 0 and len(style) == 0:
        raise ValueError("train_step needs at least one non-empty batch")
    grads: dict[str, np.ndarray] = {}
    losses = []
    for branch, batch in ((BranchId.CONTENT, content), (BranchId.STYLE, style)):
        if len(batch) == 0:
            losses.append(0.0)
            continue
        loss, g = _scene_loss_and_grads(model, branch, batch, config, rng)
        losses.append(loss)
        for k, v in g.items():
            if k in grads:
                grads[k] += v
            else:
                grads[k] = v
    params = model.parameters()
    lr = {k: (config.lr_hash if k.endswith("/hash") else config.lr_mlp) for k in grads}
    adam_step(params, grads, state, lr, config.beta1, config.beta2, config.eps)
    return losses[0], losses[1]


@dataclass
class TrainResult:
    model: RadianceModel
    history: list[tuple[int, float, float, float]]
    state: AdamState


def train(model: RadianceModel, content: ViewDataset, style: ViewDataset, config: TrainConfig,
          progress: Callable[[str], None] | None = print,
          checkpoint: Callable[[RadianceModel, int], None] | None = None,
          bounds=((0, 0, 0), (1, 1, 1))) -> TrainResult:
    """Train both branches for ``config.iterations`` steps.

    Progress lines are ``iter, loss_content, loss_style, elapsed_s``.
    """
    rng = np.random.default_rng(config.seed)
    pools = RayPool(content, bounds), RayPool(style, bounds)
    state = AdamState()
    history = []
    start = time.perf_counter()
    n = config.rays_per_batch_per_scene
    for it in range(1, config.iterations + 1):
        batch_c = pools[0].sample(n, rng)
        batch_s = pools[1].sample(n, rng)
        lc, ls = train_step(model, batch_c, batch_s, state, config, rng)
        if not (np.isfinite(lc) and np.isfinite(ls)):
            raise FloatingPointError(f"non-finite loss at iteration {it}")
        elapsed = time.perf_counter() - start
        history.append((it, lc, ls, elapsed))
        if progress and (it % config.log_every == 0 or it == config.iterations):
            progress(f"{it}, {lc:.6f}, {ls:.6f}, {elapsed:.1f}")
        if checkpoint and config.checkpoint_every and it % config.checkpoint_every == 0:
            checkpoint(model, it)
    return TrainResult(model, history, state)


def psnr(image, reference) -> float:
    a, b = np.asarray(image, dtype=np.float64), np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))
