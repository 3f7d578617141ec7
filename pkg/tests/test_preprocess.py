import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepcluster.preprocess import (augment, bilinear_resize, central_crop, horizontal_flip,
                                    random_resized_crop, sobel_batch, sobel_transform)
from deepcluster.tensor import make_rng


def test_sobel_constant_image_interior_zero():
    out = sobel_transform(np.full((1, 6, 6), 0.7, dtype=np.float32))
    assert out.shape == (2, 6, 6)
    np.testing.assert_allclose(out[:, 1:-1, 1:-1], 0.0, atol=1e-6)


def test_sobel_vertical_edge():
    img = np.zeros((1, 5, 5), dtype=np.float32)
    img[:, :, 3:] = 1.0
    out = sobel_transform(img)
    # interior column left of the edge: (1 + 2 + 1) from the x kernel
    np.testing.assert_array_equal(out[0, 1:-1, 2], 4.0)
    assert not out[1, 1:-1, 1:-1].any()


def test_sobel_rgb_uses_channel_mean(rng):
    rgb = rng.random((3, 6, 6)).astype(np.float32)
    gray = rgb.mean(axis=0, keepdims=True, dtype=np.float32)
    np.testing.assert_allclose(sobel_transform(rgb), sobel_transform(gray), atol=1e-6)


def test_sobel_rejects_two_channels():
    with pytest.raises(ValueError):
        sobel_batch(np.zeros((1, 2, 4, 4), dtype=np.float32))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(-3, 3), st.floats(-3, 3))
def test_sobel_is_linear(seed, a, b):
    g = np.random.default_rng(seed)
    x, y = g.random((2, 1, 1, 5, 5))
    lhs = sobel_batch(a * x + b * y)
    rhs = a * sobel_batch(x) + b * sobel_batch(y)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_central_crop_even():
    img = np.arange(16, dtype=np.float32).reshape(1, 4, 4)
    np.testing.assert_array_equal(central_crop(img, (2, 2))[0], [[5, 6], [9, 10]])


def test_central_crop_odd_leftover_bottom_right():
    img = np.arange(25, dtype=np.float32).reshape(1, 5, 5)
    np.testing.assert_array_equal(central_crop(img, (2, 2))[0], [[6, 7], [11, 12]])


def test_central_crop_too_big():
    with pytest.raises(ValueError):
        central_crop(np.zeros((1, 4, 4)), (5, 4))


def test_flip_probabilities(rng):
    img = np.arange(6, dtype=np.float32).reshape(1, 2, 3)
    np.testing.assert_array_equal(horizontal_flip(img, rng, 1.0), img[..., ::-1])
    np.testing.assert_array_equal(horizontal_flip(img, rng, 0.0), img)


def test_resize_identity(rng):
    img = rng.random((2, 5, 7)).astype(np.float32)
    np.testing.assert_allclose(bilinear_resize(img, (5, 7)), img, atol=1e-7)


def test_resize_constant(rng):
    out = bilinear_resize(np.full((1, 9, 4), 0.25, np.float32), (3, 11))
    np.testing.assert_allclose(out, 0.25, atol=1e-7)


def test_full_scale_crop_is_identity():
    img = np.arange(64, dtype=np.float32).reshape(1, 8, 8)
    out = random_resized_crop(img, make_rng(0), (8, 8), scale=(1.0, 1.0), ratio=(1.0, 1.0))
    np.testing.assert_array_equal(out, img)


def test_augment_reproducible(rng):
    img = rng.random((1, 12, 12)).astype(np.float32)
    a = augment(img, make_rng(3, 1), (8, 8), (0.3, 1.0), (0.75, 4 / 3), 0.5)
    b = augment(img, make_rng(3, 1), (8, 8), (0.3, 1.0), (0.75, 4 / 3), 0.5)
    assert a.shape == (1, 8, 8)
    np.testing.assert_array_equal(a, b)


def test_crop_rejects_bad_scale():
    with pytest.raises(ValueError):
        random_resized_crop(np.zeros((1, 4, 4)), make_rng(0), (2, 2), scale=(0.5, 1.5))
