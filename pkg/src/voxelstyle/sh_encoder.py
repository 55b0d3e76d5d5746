"""Degree-4 real spherical harmonics (16 coefficients) for view directions.

Bands l = 0..3, ordered by (l, m) with m = -l..l. The Condon-Shortley phase is
omitted, so every band-1 term has a positive sign.
"""

import numpy as np

N_COEFFS = 16

C0 = 0.28209479177387814  # 1/2 sqrt(1/pi)
C1 = 0.4886025119029199  # sqrt(3/(4pi))
C2 = (1.0925484305920792, 0.31539156525252005, 0.5462742152960396)
C3 = (0.5900435899266435, 2.890611442640554, 0.4570457994644658,
      0.3731763325901154, 1.445305721320277)


def sh_encode(direction) -> np.ndarray:
    """Evaluate the basis at ``direction`` (``(3,)`` or ``(N, 3)``); normalizes internally."""
    d = np.asarray(direction, dtype=np.float64)
    single = d.ndim == 1
    d = np.atleast_2d(d)
    norm = np.linalg.norm(d, axis=-1, keepdims=True)
    if np.any(norm < 1e-12) or not np.all(np.isfinite(norm)):
        raise ValueError("direction must be finite and non-zero")
    x, y, z = np.moveaxis(d / norm, -1, 0)
    xx, yy, zz = x * x, y * y, z * z
    out = np.stack([
        np.full_like(x, C0),
        C1 * y,
        C1 * z,
        C1 * x,
        C2[0] * x * y,
        C2[0] * y * z,
        C2[1] * (3.0 * zz - 1.0),
        C2[0] * x * z,
        C2[2] * (xx - yy),
        C3[0] * y * (3.0 * xx - yy),
        C3[1] * x * y * z,
        C3[2] * y * (5.0 * zz - 1.0),
        C3[3] * z * (5.0 * zz - 3.0),
        C3[2] * x * (5.0 * zz - 1.0),
        C3[4] * z * (xx - yy),
        C3[0] * x * (xx - 3.0 * yy),
    ], axis=-1)
    return out[0] if single else out


def band_slices():
    return [slice(l * l, (l + 1) * (l + 1)) for l in range(4)]
