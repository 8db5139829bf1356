import colorsys
import itertools
import math

import numpy as np
import pytest
import torch

from augsweep import kernels
from augsweep.imagecore import (
    HsvPixel,
    ImageBuffer,
    ImageError,
    bilinear_sample,
    hsv_to_rgb,
    resize,
    rgb_to_hsv,
    round_intensity,
    to_tensor,
)

from conftest import random_image


def test_image_buffer_validates_shape_and_range():
    with pytest.raises(ImageError):
        ImageBuffer(np.zeros((4, 4, 2), dtype=np.uint8))
    with pytest.raises(ImageError):
        ImageBuffer(np.zeros((0, 4, 1), dtype=np.uint8))
    with pytest.raises(ImageError):
        ImageBuffer(np.full((2, 2), 300, dtype=np.int32))
    img = ImageBuffer(np.zeros((3, 5), dtype=np.uint8))
    assert img.shape == (3, 5, 1)
    assert (img.height, img.width, img.channels) == (3, 5, 1)


def test_image_buffer_is_immutable():
    img = ImageBuffer(np.zeros((2, 2, 1), dtype=np.uint8))
    with pytest.raises(ValueError):
        img.pixels[0, 0, 0] = 1


def test_round_intensity_half_away_and_clamp():
    assert round_intensity(127.5) == 128
    assert round_intensity(127.49) == 127
    assert round_intensity(-3.0) == 0
    assert round_intensity(300.0) == 255


@pytest.mark.parametrize("rgb,hsv", [
    ((255, 0, 0), (0.0, 1.0, 1.0)),
    ((128, 128, 128), (0.0, 0.0, 128 / 255)),
    ((0, 255, 255), (0.5, 1.0, 1.0)),
])
def test_rgb_to_hsv_examples(rgb, hsv):
    p = rgb_to_hsv(*rgb)
    assert (p.h, p.s, p.v) == pytest.approx(hsv, abs=1e-15)


@pytest.mark.parametrize("hsv,rgb", [
    ((0.7, 0.0, 1.0), (255, 255, 255)),
    ((0.0, 1.0, 1.0), (255, 0, 0)),
    ((1 / 3, 1.0, 1.0), (0, 255, 0)),
])
def test_hsv_to_rgb_examples(hsv, rgb):
    assert hsv_to_rgb(HsvPixel(*hsv)) == rgb


def test_hsv_pixel_bounds():
    with pytest.raises(ValueError):
        HsvPixel(1.0, 0.5, 0.5)
    with pytest.raises(ValueError):
        HsvPixel(0.0, 1.5, 0.5)


def test_rgb_to_hsv_matches_colorsys_on_cube():
    vals = range(0, 256, 8)
    rgb = np.array(list(itertools.product(vals, vals, vals)), dtype=np.float64) / 255.0
    ours = kernels.rgb_to_hsv_array(rgb)
    ref = np.array([colorsys.rgb_to_hsv(*px) for px in rgb])
    np.testing.assert_allclose(ours, ref, atol=1e-12)


def test_hsv_round_trip_exhaustive():
    # all 256^3 colors, in slabs of fixed red
    g, b = np.meshgrid(np.arange(256), np.arange(256), indexing="ij")
    for r in range(256):
        rgb = np.stack([np.full_like(g, r), g, b], axis=-1).reshape(-1, 3)
        hsv = kernels.rgb_to_hsv_array(rgb / 255.0)
        back = np.floor(kernels.hsv_to_rgb_array(hsv) * 255.0 + 0.5)
        assert np.array_equal(back, rgb), f"round trip failed in slab r={r}"


def test_hsv_round_trip_achromatic_exact():
    for v in range(256):
        assert hsv_to_rgb(rgb_to_hsv(v, v, v)) == (v, v, v)


def test_bilinear_examples():
    img = ImageBuffer(np.array([[0, 0], [255, 255]], dtype=np.uint8))
    assert bilinear_sample(img, 1, 0) == (0,)
    assert bilinear_sample(img, 0, 1) == (255,)
    assert bilinear_sample(img, 0.5, 0.5) == (128,)  # 127.5 rounds half up
    assert bilinear_sample(img, -100, 0, fill=9) == (9,)


def test_bilinear_partial_overlap_blends_fill():
    img = ImageBuffer(np.full((2, 2), 200, dtype=np.uint8))
    # halfway between pixel column 0 and the virtual column -1 (fill)
    assert bilinear_sample(img, -0.5, 0, fill=0) == (100,)
    assert bilinear_sample(img, -0.51, 0, fill=0) == (0,)


def test_bilinear_integer_points_exact(rng):
    img = random_image(rng, 7, 9, 3)
    for y in range(7):
        for x in range(9):
            assert bilinear_sample(img, x, y) == tuple(int(v) for v in img.pixels[y, x])


def test_bilinear_continuity(rng):
    img = random_image(rng, 16, 16, 1)
    for _ in range(500):
        x, y = rng.uniform(0.5, 14.5, 2)
        a = bilinear_sample(img, x, y)[0]
        b = bilinear_sample(img, x + 1e-6, y + 1e-6)[0]
        assert abs(a - b) <= 1


def test_bilinear_rejects_nan():
    img = ImageBuffer(np.zeros((2, 2), dtype=np.uint8))
    with pytest.raises(ValueError):
        bilinear_sample(img, math.nan, 0)


def test_to_tensor_values_and_replication(rng):
    zero = ImageBuffer(np.zeros((4, 5), dtype=np.uint8))
    full = ImageBuffer(np.full((4, 5), 255, dtype=np.uint8))
    assert torch.equal(to_tensor(zero), torch.zeros(3, 4, 5))
    assert torch.equal(to_tensor(full), torch.ones(3, 4, 5))
    px = ImageBuffer(np.full((1, 1), 51, dtype=np.uint8))
    assert to_tensor(px, dtype=torch.float64)[0, 0, 0].item() == pytest.approx(0.2, abs=1e-15)
    t = to_tensor(random_image(rng, 6, 7, 1))
    assert t.shape == (3, 6, 7)
    assert torch.equal(t[0], t[1]) and torch.equal(t[1], t[2])
    assert 0.0 <= float(t.min()) and float(t.max()) <= 1.0


def test_resize_identity_and_constant():
    img = ImageBuffer(np.full((10, 12, 3), 77, dtype=np.uint8))
    assert resize(img, 10, 12) is img
    out = resize(img, 5, 7)
    assert out.shape == (5, 7, 3)
    assert np.all(out.pixels == 77)


def test_gray_conversion_weights():
    img = ImageBuffer(np.array([[[255, 0, 0], [0, 255, 0], [0, 0, 255]]], dtype=np.uint8))
    assert img.to_gray().pixels[0, :, 0].tolist() == [76, 150, 29]
