import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from curvexpand.segmap_post import otsu_threshold, plausibility_filter, to_uint8

from oracles import brute_force_otsu


@given(st.integers(1, 63), st.integers(0, 2**16))
def test_two_valued_image_separates_exactly(n_high, seed):
    rng = np.random.default_rng(seed)
    img = np.full(64, 10, np.uint8)
    img[rng.choice(64, n_high, replace=False)] = 200
    img = img.reshape(8, 8)
    res = otsu_threshold(img)
    assert 10 <= res.threshold < 200
    assert np.array_equal(res.mask == 255, img == 200)
    assert res.threshold == brute_force_otsu(img)


def test_binary_image_is_fixed_point():
    img = np.zeros((16, 16), np.uint8)
    img[4:9, 2:12] = 255
    res = otsu_threshold(img)
    assert np.array_equal(res.mask, img) and not res.degenerate


def test_constant_image_is_degenerate():
    res = otsu_threshold(np.full((8, 8), 77, np.uint8))
    assert res.degenerate and not res.mask.any()


def test_matches_brute_force_on_random_images():
    rng = np.random.default_rng(0)
    for _ in range(25):
        img = rng.integers(0, 256, (32, 32)).astype(np.uint8)
        assert otsu_threshold(img).threshold == brute_force_otsu(img)


@given(arrays(np.uint8, (6, 6)))
def test_otsu_properties(img):
    res = otsu_threshold(img)
    assert set(np.unique(res.mask)) <= {0, 255}
    if not res.degenerate:
        assert res.threshold == brute_force_otsu(img)
        again = otsu_threshold(res.mask)
        assert np.array_equal(again.mask, res.mask)


def test_rgb_uses_channel_mean():
    gray = np.zeros((8, 8), np.uint8)
    gray[2:5] = 240
    rgb = np.stack([gray, gray, gray], -1)
    assert np.array_equal(otsu_threshold(rgb).mask, otsu_threshold(gray).mask)


def test_to_uint8_range_and_channels():
    x = torch.tensor([[[-1.0, 0.0, 1.0, 3.0]]])
    assert to_uint8(x).tolist() == [[0, 128, 255, 255]]
    assert to_uint8(np.stack([x[0].numpy(), -x[0].numpy()])).tolist() == [[128, 128, 128, 128]]


def test_empty_mask_rejected():
    d = plausibility_filter(np.zeros((10, 10), np.uint8), 0.001, 0.5)
    assert not d.accepted and d.reason == "empty"


def test_min_fraction_is_inclusive():
    mask = np.zeros((10, 10), np.uint8)
    mask.flat[:5] = 255
    assert plausibility_filter(mask, 0.05, 0.5).accepted
    mask.flat[:50] = 255
    assert plausibility_filter(mask, 0.05, 0.5).accepted


def test_filter_bounds_validated():
    with pytest.raises(ValueError):
        plausibility_filter(np.zeros((2, 2), np.uint8), 0.5, 0.1)


@given(arrays(np.bool_, (7, 9)), st.floats(0.001, 0.4), st.floats(0.01, 0.59))
def test_filter_matches_pixel_count(fg, lo, width):
    hi = lo + width
    mask = np.where(fg, 255, 0).astype(np.uint8)
    count = sum(1 for v in mask.ravel() if v == 255)
    d = plausibility_filter(mask, lo, hi)
    assert d.accepted == (count > 0 and lo <= count / mask.size <= hi)
    if not d.accepted:
        expected = "empty" if count == 0 else ("too-sparse" if count / mask.size < lo else "saturated")
        assert d.reason == expected
