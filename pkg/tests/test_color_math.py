import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from histonorm.color_math import (
    DEFAULT_OPTICS,
    OpticsConfig,
    load_rgb,
    od_to_rgb,
    rgb_to_od,
    round_half_away,
    save_rgb,
)
from histonorm.errors import UnreadableImage

images = arrays(np.uint8, st.tuples(st.integers(1, 8), st.integers(1, 8), st.just(3)))


def test_od_of_white_is_zero():
    assert np.all(rgb_to_od(np.full((2, 2, 3), 255, np.uint8)) == 0.0)


def test_od_matches_closed_form_per_level():
    levels = np.arange(256, dtype=np.uint8).reshape(16, 16, 1).repeat(3, axis=2)
    od = rgb_to_od(levels)
    for v in (1, 2, 17, 128, 254):
        assert od.reshape(-1, 3)[v, 0] == pytest.approx(-math.log10(v / 255.0), abs=1e-15)


def test_black_is_clamped_to_finite_ceiling():
    od = rgb_to_od(np.zeros((1, 1, 3), np.uint8))
    assert np.all(np.isfinite(od))
    assert od[0, 0, 0] == pytest.approx(math.log10(255.0))
    assert DEFAULT_OPTICS.od_ceiling == pytest.approx(math.log10(255.0))


@given(images)
def test_round_trip_is_exact_above_clamp(image):
    image = np.maximum(image, 1)
    assert np.array_equal(od_to_rgb(rgb_to_od(image)), image)


@given(st.floats(-1000, 1000, allow_nan=False))
def test_round_half_away_from_zero(x):
    r = float(round_half_away(np.array(x)))
    assert abs(r - x) <= 0.5
    if abs(x - math.trunc(x)) == 0.5:
        assert abs(r) > abs(x)


def test_round_half_cases():
    assert list(round_half_away(np.array([0.5, 1.5, 2.5, -0.5, -2.5]))) == [1, 2, 3, -1, -3]


def test_od_to_rgb_clamps():
    out = od_to_rgb(np.array([[[-1.0, 5.0, 0.0]]]))
    assert out.tolist() == [[[255, 0, 255]]]


def test_custom_white_level():
    cfg = OpticsConfig(i0=240.0)
    assert rgb_to_od(np.full((1, 1, 3), 240, np.uint8), cfg)[0, 0, 0] == 0.0
    assert rgb_to_od(np.full((1, 1, 3), 255, np.uint8), cfg)[0, 0, 0] < 0


@pytest.mark.parametrize("i0,clamp", [(255.0, 0), (100.0, 100), (300.0, 1)])
def test_invalid_optics(i0, clamp):
    with pytest.raises(ValueError):
        OpticsConfig(i0=i0, min_intensity_clamp=clamp)


def test_rejects_non_rgb():
    with pytest.raises(ValueError):
        rgb_to_od(np.zeros((4, 4), np.uint8))
    with pytest.raises(ValueError):
        rgb_to_od(np.zeros((4, 4, 3), np.float32))


def test_png_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (9, 7, 3), dtype=np.uint8)
    save_rgb(img, tmp_path / "a.png")
    assert np.array_equal(load_rgb(tmp_path / "a.png"), img)


def test_unreadable_image(tmp_path):
    (tmp_path / "bad.png").write_bytes(b"not a png")
    with pytest.raises(UnreadableImage):
        load_rgb(tmp_path / "bad.png")
