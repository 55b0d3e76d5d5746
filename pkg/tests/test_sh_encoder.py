import numpy as np
import pytest
from hypothesis import given, strategies as st

from voxelstyle.sh_encoder import N_COEFFS, band_slices, sh_encode


def test_constant_and_band_one_terms():
    out = sh_encode([0.0, 0.0, 1.0])
    assert out.shape == (N_COEFFS,)
    assert out[0] == pytest.approx(0.28209479, abs=1e-8)
    # band 1 is ordered (y, z, x) with no sign flip
    np.testing.assert_allclose(out[1:4], [0.0, 0.48860251, 0.0], atol=1e-8)
    np.testing.assert_allclose(sh_encode([1.0, 0, 0])[1:4], [0, 0, 0.48860251], atol=1e-8)


def test_normalizes_input():
    np.testing.assert_allclose(sh_encode([0, 3.0, 4.0]), sh_encode([0, 0.6, 0.8]), atol=1e-15)


def test_zero_direction_rejected():
    with pytest.raises(ValueError):
        sh_encode([0.0, 0.0, 0.0])


def test_orthonormal_under_quadrature():
    # Monte-Carlo Gram matrix over the sphere approaches the identity
    rng = np.random.default_rng(0)
    d = rng.normal(size=(400_000, 3))
    y = sh_encode(d)
    gram = 4 * np.pi * y.T @ y / len(d)
    np.testing.assert_allclose(gram, np.eye(N_COEFFS), atol=0.02)


direction = st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda v: np.linalg.norm(v) > 1e-3)


@given(direction)
def test_band_energy_is_rotation_invariant(v):
    y = sh_encode(v)
    for l, sl in enumerate(band_slices()):
        assert np.sum(y[sl] ** 2) == pytest.approx((2 * l + 1) / (4 * np.pi), rel=1e-9)


@given(direction)
def test_parity(v):
    y, yn = sh_encode(v), sh_encode(-np.asarray(v))
    for l, sl in enumerate(band_slices()):
        np.testing.assert_allclose(yn[sl], (-1) ** l * y[sl], atol=1e-12)


def test_batched_matches_single():
    d = np.random.default_rng(1).normal(size=(7, 3))
    np.testing.assert_array_equal(sh_encode(d)[3], sh_encode(d[3]))
