import numpy as np
import pytest

from resight import rng
from resight.matchers.descriptors import (
    DERIVATIVE_ORDERS,
    descriptor_cosine,
    extract_features,
    gaussian_kernels,
    kernel_radius,
    point_response,
)


def naive_point_response(image, x, y, sigma, order_x, order_y):
    """Brute-force O(n^2) windowed correlation with the sampled kernels."""
    kernels = gaussian_kernels(sigma)
    kx, ky = kernels[order_x], kernels[order_y]
    r = kernel_radius(sigma)
    total = 0.0
    for iy, dy in enumerate(range(-r, r + 1)):
        for ix, dx in enumerate(range(-r, r + 1)):
            total += ky[iy] * kx[ix] * image[y + dy, x + dx]
    return total


def test_constant_image_has_zero_derivative_responses():
    image = np.full((64, 64), 0.37)
    fs = extract_features(image, [(32, 32), (20, 40)])
    for row in fs.descriptors:
        for block_start in range(0, row.size, len(DERIVATIVE_ORDERS)):
            block = row[block_start : block_start + len(DERIVATIVE_ORDERS)]
            # order-0 response normalizes to 1, all derivative orders to 0
            assert block[0] == pytest.approx(1.0)
            np.testing.assert_allclose(block[1:], 0.0, atol=1e-15)


def test_determinism_bit_identical():
    gen = rng.generator("desc-det")
    image = gen.random((64, 64))
    fids = [(30, 30), (40, 25), (22, 41)]
    a = extract_features(image, fids)
    b = extract_features(image, fids)
    assert np.array_equal(a.descriptors, b.descriptors)


@pytest.mark.parametrize("sigma", [1.0, 2.0, 4.0])
def test_step_edge_matches_naive_convolution_oracle(sigma):
    image = np.zeros((64, 64))
    image[:, 32:] = 1.0
    x, y = 32, 32
    for order_x, order_y in DERIVATIVE_ORDERS:
        fast = point_response(image, x, y, sigma, order_x, order_y)
        slow = naive_point_response(image, x, y, sigma, order_x, order_y)
        assert fast == pytest.approx(slow, abs=1e-12)
    # the x-derivative actually fires on a vertical edge
    assert point_response(image, x, y, sigma, 1, 0) > 0.01


def test_random_image_matches_naive_oracle():
    gen = rng.generator("desc-oracle")
    image = gen.random((48, 48))
    for order_x, order_y in DERIVATIVE_ORDERS:
        fast = point_response(image, 24, 20, 2.0, order_x, order_y)
        slow = naive_point_response(image, 24, 20, 2.0, order_x, order_y)
        assert fast == pytest.approx(slow, abs=1e-12)


def test_scale_blocks_have_unit_or_zero_norm():
    gen = rng.generator("desc-norm")
    image = gen.random((64, 64))
    fs = extract_features(image, [(32, 32)])
    row = fs.descriptors[0]
    for block_start in range(0, row.size, len(DERIVATIVE_ORDERS)):
        block = row[block_start : block_start + len(DERIVATIVE_ORDERS)]
        assert np.linalg.norm(block) == pytest.approx(1.0, abs=1e-12)


def test_border_fiducials_skipped_with_warning(caplog):
    gen = rng.generator("desc-border")
    image = gen.random((64, 64))
    with caplog.at_level("WARNING"):
        fs = extract_features(image, [(2, 2), (32, 32)])
    assert fs.index == [1]
    assert "too close to border" in caplog.text


def test_all_border_fiducials_is_an_error():
    image = np.zeros((32, 32))
    with pytest.raises(ValueError, match="no fiducial usable"):
        extract_features(image, [(1, 1), (30, 30)])


def test_out_of_bounds_fiducial_is_an_error():
    image = np.zeros((32, 32))
    with pytest.raises(ValueError, match="outside image bounds"):
        extract_features(image, [(40, 10)])


def test_empty_fiducial_list_is_an_error():
    with pytest.raises(ValueError, match="at least one fiducial"):
        extract_features(np.zeros((32, 32)), [])


def test_cosine_self_similarity_and_symmetry():
    gen = rng.generator("desc-cos")
    image_a = gen.random((64, 64))
    image_b = gen.random((64, 64))
    fids = [(30, 30), (40, 25), (22, 41)]
    fa = extract_features(image_a, fids)
    fb = extract_features(image_b, fids)
    assert descriptor_cosine(fa, fa) == pytest.approx(1.0, abs=1e-12)
    assert abs(descriptor_cosine(fa, fb) - descriptor_cosine(fb, fa)) < 1e-12
