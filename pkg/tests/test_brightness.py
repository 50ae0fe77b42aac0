import numpy as np
import pytest

from resight import rng
from resight.matchers.brightness import Patch, extract_patch, nbe, standardize


def test_identical_patches_score_zero():
    gen = rng.generator("nbe-ident")
    a = gen.random((16, 16))
    scalar, err_map = nbe(a, a)
    assert scalar == 0.0
    assert not err_map.any()


def test_photometric_affine_invariance():
    gen = rng.generator("nbe-affine")
    a = gen.random((16, 16))
    b = 0.5 * a + 0.2
    scalar, _ = nbe(a, b)
    assert scalar == pytest.approx(0.0, abs=1e-24)


def test_matches_direct_formula_on_seeded_patches():
    gen = rng.generator("nbe-oracle")
    a = gen.random((16, 16))
    b = gen.random((16, 16))
    scalar, err_map = nbe(a, b)
    # independent direct computation
    za = (a - a.mean()) / a.std()
    zb = (b - b.mean()) / b.std()
    expected = np.mean((za - zb) ** 2)
    assert scalar == pytest.approx(expected, abs=1e-12)
    np.testing.assert_allclose(err_map, np.abs(za - zb), atol=1e-12)
    assert 0.0 <= scalar <= 4.0


def test_symmetry_is_exact():
    gen = rng.generator("nbe-sym")
    a = gen.random((12, 12))
    b = gen.random((12, 12))
    assert nbe(a, b)[0] == nbe(b, a)[0]


def test_dimension_mismatch_raises():
    with pytest.raises(ValueError, match="dimensions differ"):
        nbe(np.zeros((8, 8)), np.zeros((8, 9)))


def test_flat_patch_standardizes_to_zeros():
    flat = np.full((10, 10), 0.7)
    assert not standardize(flat).any()
    assert nbe(flat, flat)[0] == 0.0


def test_extract_patch_clamps_to_bounds_and_keeps_size():
    gen = rng.generator("patch")
    image = gen.random((60, 60))
    inner = extract_patch(image, (30, 30), half_width=10)
    corner = extract_patch(image, (2, 2), half_width=10)
    assert inner.pixels.shape == corner.pixels.shape == (21, 21)
    np.testing.assert_array_equal(corner.pixels, image[:21, :21])


def test_patch_minimum_size_enforced():
    with pytest.raises(ValueError, match="too small"):
        Patch(pixels=np.zeros((4, 4)), anchor=0, scale=2)
