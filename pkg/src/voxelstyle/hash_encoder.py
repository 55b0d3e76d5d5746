"""Multiresolution hash-grid position encoding.

Each level stores a table of ``T`` feature vectors. Levels whose vertex lattice
fits in the table are indexed densely; finer levels use a spatial hash. A
position is encoded by trilinearly interpolating the 8 corner features of its
enclosing cell at every level and concatenating the results.

All functions accept a single position of shape ``(3,)`` or a batch ``(N, 3)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

PRIMES = (1, 2654435761, 805459861)

# corner k of a cell has offset bit i of k along axis (2 - i): x is the high bit
_CORNER_OFFSETS = np.array(
    [[(k >> 2) & 1, (k >> 1) & 1, k & 1] for k in range(8)], dtype=np.int64
)


@dataclass(frozen=True)
class HashGridSpec:
    levels: int = 8
    table_size: int = 2**14
    features_per_level: int = 2
    base_resolution: int = 16
    growth_factor: float = 1.5
    bounds: tuple[tuple[float, float, float], tuple[float, float, float]] = (
        (0.0, 0.0, 0.0),
        (1.0, 1.0, 1.0),
    )

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if self.table_size < 8 or self.table_size & (self.table_size - 1):
            raise ValueError(f"table_size must be a power of two >= 8, got {self.table_size}")
        if self.features_per_level < 1:
            raise ValueError("features_per_level must be >= 1")
        if self.base_resolution < 2:
            raise ValueError("base_resolution must be >= 2")
        if not self.growth_factor > 1:
            raise ValueError("growth_factor must be > 1")
        lo, hi = np.asarray(self.bounds[0], float), np.asarray(self.bounds[1], float)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
            raise ValueError(f"invalid bounds {self.bounds}")

    @property
    def output_dim(self) -> int:
        return self.levels * self.features_per_level


@dataclass
class HashGridParams:
    """Trainable feature tables, one ``(T, F)`` slab per level."""

    tables: np.ndarray = field(repr=False)

    @classmethod
    def zeros(cls, spec: HashGridSpec, dtype=np.float64) -> "HashGridParams":
        shape = (spec.levels, spec.table_size, spec.features_per_level)
        return cls(np.zeros(shape, dtype=dtype))

    @classmethod
    def init(cls, spec: HashGridSpec, rng: np.random.Generator, scale: float = 1e-4,
             dtype=np.float64) -> "HashGridParams":
        shape = (spec.levels, spec.table_size, spec.features_per_level)
        return cls(rng.uniform(-scale, scale, size=shape).astype(dtype))

    def validate(self, spec: HashGridSpec) -> None:
        expected = (spec.levels, spec.table_size, spec.features_per_level)
        if self.tables.shape != expected:
            raise ValueError(f"table shape {self.tables.shape} != {expected}")
        if not np.all(np.isfinite(self.tables)):
            raise ValueError("hash tables contain non-finite values")


def level_resolution(spec: HashGridSpec, level: int) -> int:
    if not 0 <= level < spec.levels:
        raise IndexError(f"level {level} out of range [0, {spec.levels})")
    return int(np.floor(spec.base_resolution * spec.growth_factor**level))


def is_dense(spec: HashGridSpec, level: int) -> bool:
    n = level_resolution(spec, level)
    return (n + 1) ** 3 <= spec.table_size


def _index(corners: np.ndarray, n: int, table_size: int, dense: bool) -> np.ndarray:
    if dense:
        stride = n + 1
        return (corners[..., 0] * stride + corners[..., 1]) * stride + corners[..., 2]
    c = corners.astype(np.uint64)
    h = c[..., 0] * np.uint64(PRIMES[0])
    h ^= c[..., 1] * np.uint64(PRIMES[1])
    h ^= c[..., 2] * np.uint64(PRIMES[2])
    return (h & np.uint64(table_size - 1)).astype(np.int64)


def grid_index(spec: HashGridSpec, level: int, corner) -> np.ndarray | int:
    """Table row for integer vertex coordinates ``corner`` at ``level``."""
    n = level_resolution(spec, level)
    corner = np.asarray(corner, dtype=np.int64)
    if corner.shape[-1] != 3:
        raise ValueError("corner must have 3 coordinates")
    if np.any(corner < 0) or np.any(corner > n):
        raise IndexError(f"corner {corner.tolist()} outside [0, {n}] at level {level}")
    idx = _index(corner, n, spec.table_size, is_dense(spec, level))
    return int(idx) if idx.ndim == 0 else idx


def normalize_positions(spec: HashGridSpec, positions) -> np.ndarray:
    """Map positions into the unit cube of ``spec.bounds``, clamping outside points."""
    p = np.asarray(positions, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValueError("positions must be finite")
    lo = np.asarray(spec.bounds[0], dtype=np.float64)
    hi = np.asarray(spec.bounds[1], dtype=np.float64)
    return np.clip((p - lo) / (hi - lo), 0.0, 1.0)


def corner_weights(spec: HashGridSpec, level: int, unit_positions: np.ndarray):
    """Row indices ``(N, 8)`` and trilinear weights ``(N, 8)`` of enclosing cells."""
    n = level_resolution(spec, level)
    scaled = unit_positions * n
    base = np.minimum(np.floor(scaled).astype(np.int64), n - 1)
    frac = scaled - base
    corners = base[:, None, :] + _CORNER_OFFSETS[None, :, :]
    rows = _index(corners, n, spec.table_size, is_dense(spec, level))
    off = _CORNER_OFFSETS[None, :, :]
    w = np.where(off == 1, frac[:, None, :], 1.0 - frac[:, None, :])
    return rows, w[..., 0] * w[..., 1] * w[..., 2]


def _as_batch(positions):
    p = np.asarray(positions)
    single = p.ndim == 1
    return (p[None, :] if single else p), single


def _level_layout(spec: HashGridSpec):
    res = np.array([level_resolution(spec, l) for l in range(spec.levels)], dtype=np.int64)
    dense = np.array([is_dense(spec, l) for l in range(spec.levels)], dtype=np.bool_)
    return res, dense


@numba.njit(cache=True, inline="always")
def _row(x, y, z, n, table_size, dense):
    if dense:
        return (x * (n + 1) + y) * (n + 1) + z
    h = np.uint64(x) ^ (np.uint64(y) * np.uint64(2654435761)) ^ (np.uint64(z) * np.uint64(805459861))
    return np.int64(h & np.uint64(table_size - 1))


@numba.njit(cache=True, inline="always")
def _cell(u, n):
    s = u * n
    b = min(np.int64(np.floor(s)), n - 1)
    return b, s - b


@numba.njit(cache=True)
def _encode_kernel(unit, tables, res, dense, out):
    n_pts = unit.shape[0]
    n_levels, table_size, n_feat = tables.shape
    for i in range(n_pts):
        for l in range(n_levels):
            n = res[l]
            bx, fx = _cell(unit[i, 0], n)
            by, fy = _cell(unit[i, 1], n)
            bz, fz = _cell(unit[i, 2], n)
            for f in range(n_feat):
                out[i, l * n_feat + f] = 0.0
            for k in range(8):
                ox, oy, oz = (k >> 2) & 1, (k >> 1) & 1, k & 1
                w = (fx if ox else 1.0 - fx) * (fy if oy else 1.0 - fy) * (fz if oz else 1.0 - fz)
                r = _row(bx + ox, by + oy, bz + oz, n, table_size, dense[l])
                for f in range(n_feat):
                    out[i, l * n_feat + f] += w * tables[l, r, f]


@numba.njit(cache=True)
def _scatter_kernel(unit, upstream, res, dense, grad):
    n_pts = unit.shape[0]
    n_levels, table_size, n_feat = grad.shape
    for i in range(n_pts):
        for l in range(n_levels):
            n = res[l]
            bx, fx = _cell(unit[i, 0], n)
            by, fy = _cell(unit[i, 1], n)
            bz, fz = _cell(unit[i, 2], n)
            for k in range(8):
                ox, oy, oz = (k >> 2) & 1, (k >> 1) & 1, k & 1
                w = (fx if ox else 1.0 - fx) * (fy if oy else 1.0 - fy) * (fz if oz else 1.0 - fz)
                r = _row(bx + ox, by + oy, bz + oz, n, table_size, dense[l])
                for f in range(n_feat):
                    grad[l, r, f] += w * upstream[i, l * n_feat + f]


def encode(params: HashGridParams, spec: HashGridSpec, positions) -> np.ndarray:
    """Encode positions into ``L * F`` features (level-major order)."""
    p, single = _as_batch(positions)
    unit = normalize_positions(spec, p)
    res, dense = _level_layout(spec)
    out = np.empty((len(unit), spec.output_dim), dtype=params.tables.dtype)
    _encode_kernel(unit, params.tables, res, dense, out)
    return out[0] if single else out


def encode_grad_tables(spec: HashGridSpec, positions, upstream_grad,
                       dtype=np.float64, out: np.ndarray | None = None) -> np.ndarray:
    """Dense ``(L, T, F)`` gradient of ``sum(upstream * encode)`` w.r.t. the tables.

    When ``out`` is given the gradient is accumulated into it in place.
    """
    p, _ = _as_batch(positions)
    g = np.ascontiguousarray(np.asarray(upstream_grad).reshape(len(p), spec.output_dim))
    unit = normalize_positions(spec, p)
    res, dense = _level_layout(spec)
    if out is None:
        out = np.zeros((spec.levels, spec.table_size, spec.features_per_level), dtype=dtype)
    _scatter_kernel(unit, g.astype(out.dtype, copy=False), res, dense, out)
    return out


@dataclass
class HashGradient:
    """Coalesced sparse gradient entries; colliding rows are already summed."""

    level: np.ndarray
    row: np.ndarray
    channel: np.ndarray
    value: np.ndarray

    def __len__(self):
        return len(self.value)

    def to_dense(self, spec: HashGridSpec, dtype=np.float64) -> np.ndarray:
        out = np.zeros((spec.levels, spec.table_size, spec.features_per_level), dtype=dtype)
        out[self.level, self.row, self.channel] = self.value
        return out


def encode_backward(params: HashGridParams, spec: HashGridSpec, positions,
                    upstream_grad) -> HashGradient:
    dense = encode_grad_tables(spec, positions, upstream_grad, dtype=np.float64)
    level, row, channel = np.nonzero(dense)
    return HashGradient(level, row, channel, dense[level, row, channel])
