"""Two-branch radiance field: per-branch hash grid + density MLP, shared color MLP.

Each branch maps a position to a geometric feature vector ``geom`` through its
own hash encoder and density MLP. ``geom[0]`` drives the density; the full
vector, concatenated with the direction encoding, feeds the color MLP that both
branches share.

Backward passes are written by hand. Gradients are accumulated into a dict keyed
like :meth:`RadianceModel.parameters`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from . import hash_encoder as he
from .sh_encoder import N_COEFFS, sh_encode

DENSITY_CLAMP = 15.0


class BranchId(str, Enum):
    CONTENT = "content"
    STYLE = "style"


BRANCHES = (BranchId.CONTENT, BranchId.STYLE)

_ACTIVATIONS = ("relu", "none")


@dataclass
class MlpParams:
    weights: list[np.ndarray]  # (out, in) per layer
    biases: list[np.ndarray]
    activations: tuple[str, ...]

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("weights, biases and activations must have equal length")
        for i, (w, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i} input {w.shape[1]} != previous output")
            if act not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")

    @classmethod
    def init(cls, sizes, activations, rng: np.random.Generator, dtype=np.float64):
        """Glorot-uniform weights, zero biases; ``sizes`` lists layer widths input first."""
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype))
            biases.append(np.zeros(fan_out, dtype=dtype))
        return cls(weights, biases, tuple(activations))

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def named(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}/w{i}"] = w
            out[f"{prefix}/b{i}"] = b
        return out


@dataclass
class MlpCache:
    params: MlpParams
    inputs: list[np.ndarray]  # input of each layer, batch-major
    pre: list[np.ndarray]  # pre-activation of each layer
    single: bool


def mlp_forward(params: MlpParams, x) -> tuple[np.ndarray, MlpCache]:
    x = np.asarray(x)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[-1] != params.in_dim:
        raise ValueError(f"input width {h.shape[-1]} != {params.in_dim}")
    inputs, pre = [], []
    for w, b, act in zip(params.weights, params.biases, params.activations):
        inputs.append(h)
        z = h @ w.T + b
        pre.append(z)
        h = np.maximum(z, 0) if act == "relu" else z
    return (h[0] if single else h), MlpCache(params, inputs, pre, single)


@dataclass
class MlpGrads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]


def mlp_backward(params: MlpParams, cache: MlpCache, upstream) -> tuple[MlpGrads, np.ndarray]:
    """Reverse pass; returns parameter gradients and the gradient w.r.t. the input."""
    if cache.params is not params:
        raise ValueError("cache was produced by a different parameter set")
    g = np.asarray(upstream)
    if cache.single:
        g = g[None, :]
    if g.shape != cache.pre[-1].shape:
        raise ValueError(f"upstream shape {g.shape} != output shape {cache.pre[-1].shape}")
    n = len(params.weights)
    dw, db = [None] * n, [None] * n
    for i in reversed(range(n)):
        if params.activations[i] == "relu":
            g = g * (cache.pre[i] > 0)
        dw[i] = g.T @ cache.inputs[i]
        db[i] = g.sum(axis=0)
        g = g @ params.weights[i]
    return MlpGrads(dw, db), (g[0] if cache.single else g)


@dataclass(frozen=True)
class ModelSpec:
    geom_dim: int = 16
    density_hidden: tuple[int, ...] = (64,)
    color_hidden: tuple[int, ...] = (64, 64)
    hidden_activation: str = "relu"

    def __post_init__(self):
        if self.geom_dim < 2:
            raise ValueError("geom_dim must be >= 2")
        if self.hidden_activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.hidden_activation!r}")


@dataclass
class Branch:
    hash_spec: he.HashGridSpec
    hash_params: he.HashGridParams
    density_mlp: MlpParams


@dataclass
class RadianceModel:
    spec: ModelSpec
    branches: dict[BranchId, Branch]
    color_mlp: MlpParams
    dtype: np.dtype = field(default=np.dtype(np.float64))

    @classmethod
    def create(cls, spec: ModelSpec = ModelSpec(), hash_spec: he.HashGridSpec = he.HashGridSpec(),
               rng: np.random.Generator | None = None, dtype=np.float32,
               style_hash_spec: he.HashGridSpec | None = None) -> "RadianceModel":
        rng = rng if rng is not None else np.random.default_rng(0)
        act = spec.hidden_activation
        branches = {}
        for bid, hs in ((BranchId.CONTENT, hash_spec), (BranchId.STYLE, style_hash_spec or hash_spec)):
            tables = he.HashGridParams.init(hs, rng, dtype=dtype)
            sizes = (hs.output_dim, *spec.density_hidden, spec.geom_dim)
            acts = (act,) * len(spec.density_hidden) + ("none",)
            branches[bid] = Branch(hs, tables, MlpParams.init(sizes, acts, rng, dtype))
        sizes = (spec.geom_dim + N_COEFFS, *spec.color_hidden, 3)
        acts = (act,) * len(spec.color_hidden) + ("none",)
        color = MlpParams.init(sizes, acts, rng, dtype)
        return cls(spec, branches, color, np.dtype(dtype))

    def parameters(self) -> dict[str, np.ndarray]:
        """Named views of every trainable array (mutating them mutates the model)."""
        out = {}
        for bid in BRANCHES:
            br = self.branches[bid]
            out[f"{bid.value}/hash"] = br.hash_params.tables
            out.update(br.density_mlp.named(f"{bid.value}/density"))
        out.update(self.color_mlp.named("color"))
        return out

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.parameters().items()}


def branch_param_names(model: RadianceModel, branch: BranchId) -> list[str]:
    return [k for k in model.parameters() if k.startswith(f"{BranchId(branch).value}/")]


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{what} must be finite")


def density_from_geom(geom: np.ndarray) -> np.ndarray:
    return np.exp(np.clip(geom[..., 0], -DENSITY_CLAMP, DENSITY_CLAMP))


def position_forward(model: RadianceModel, branch: BranchId, position):
    """Density and geometric feature vector at ``position`` for one branch."""
    _check_finite(np.asarray(position), "position")
    br = model.branches[BranchId(branch)]
    enc = he.encode(br.hash_params, br.hash_spec, position)
    geom, _ = mlp_forward(br.density_mlp, enc)
    return density_from_geom(geom), geom


def color_forward(model: RadianceModel, geom, dir_enc) -> np.ndarray:
    geom = np.asarray(geom)
    dir_enc = np.asarray(dir_enc)
    if geom.shape[-1] != model.spec.geom_dim:
        raise ValueError(f"geom width {geom.shape[-1]} != {model.spec.geom_dim}")
    if dir_enc.shape[-1] != N_COEFFS:
        raise ValueError(f"direction encoding width {dir_enc.shape[-1]} != {N_COEFFS}")
    x = np.concatenate([geom, dir_enc.astype(geom.dtype, copy=False)], axis=-1)
    logits, _ = mlp_forward(model.color_mlp, x)
    return _sigmoid(logits)


def full_forward(model: RadianceModel, branch: BranchId, position, direction):
    sigma, geom = position_forward(model, branch, position)
    rgb = color_forward(model, geom, sh_encode(direction))
    return sigma, rgb


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


@dataclass
class SampleCache:
    branch: BranchId
    positions: np.ndarray
    density_cache: MlpCache
    color_cache: MlpCache
    sigma: np.ndarray
    rgb: np.ndarray
    geom0: np.ndarray
    adjusted: bool


FeatureFn = Callable[[np.ndarray], np.ndarray]


def forward_samples(model: RadianceModel, branch: BranchId, positions: np.ndarray,
                    dir_enc: np.ndarray, feature_fn: FeatureFn | None = None):
    """Batched forward over sample points, keeping what the backward pass needs.

    ``feature_fn`` rewrites the features fed to the color MLP; density always
    comes from the unmodified features.
    """
    br = model.branches[BranchId(branch)]
    enc = he.encode(br.hash_params, br.hash_spec, positions)
    geom, dcache = mlp_forward(br.density_mlp, enc)
    sigma = density_from_geom(geom)
    color_in = geom if feature_fn is None else feature_fn(geom).astype(geom.dtype, copy=False)
    x = np.concatenate([color_in, dir_enc.astype(geom.dtype, copy=False)], axis=-1)
    logits, ccache = mlp_forward(model.color_mlp, x)
    rgb = _sigmoid(logits)
    cache = SampleCache(BranchId(branch), positions, dcache, ccache, sigma, rgb, geom[:, 0],
                        feature_fn is not None)
    return sigma, rgb, cache


def backward_samples(model: RadianceModel, cache: SampleCache, dsigma: np.ndarray,
                     drgb: np.ndarray, grads: dict[str, np.ndarray]) -> None:
    """Accumulate parameter gradients of a sample batch into ``grads``."""
    if cache.adjusted:
        raise ValueError("backward through adjusted features is not supported")
    bid = cache.branch
    br = model.branches[bid]
    dlogits = drgb * cache.rgb * (1.0 - cache.rgb)
    cg, dx = mlp_backward(model.color_mlp, cache.color_cache, dlogits)
    _accumulate(grads, cg, "color")
    dgeom = np.array(dx[:, : model.spec.geom_dim])
    inside = np.abs(cache.geom0) < DENSITY_CLAMP
    dgeom[:, 0] += dsigma * cache.sigma * inside
    dg, denc = mlp_backward(br.density_mlp, cache.density_cache, dgeom)
    _accumulate(grads, dg, f"{bid.value}/density")
    he.encode_grad_tables(br.hash_spec, cache.positions, denc, out=grads[f"{bid.value}/hash"])


def _accumulate(grads, mg: MlpGrads, prefix):
    for i, (w, b) in enumerate(zip(mg.weights, mg.biases)):
        grads[f"{prefix}/w{i}"] += w
        grads[f"{prefix}/b{i}"] += b
