import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from featbench.distort import (
    DEFAULT_PARAMS,
    KINDS,
    Scenario,
    adjust_intensity,
    fisheye,
    fisheye_source_radius,
    noise_positions,
    rotate,
    salt_pepper,
    scale,
    shear,
    splitmix64,
    splitmix64_uniform,
)
from featbench.imgcore import GrayImage, blur_array

from .oracles import bilinear_loop, splitmix64_scalar


@pytest.fixture
def smooth(rng):
    """Band-limited texture: bilinear round trips of sharp content lose more than 2 levels."""
    arr = blur_array(rng.uniform(0, 255, (48, 64)), 4.0)
    arr = (arr - arr.min()) / (arr.max() - arr.min()) * 200 + 20
    return GrayImage(arr)


# ---------------------------------------------------------------- SplitMix64


@pytest.mark.parametrize("seed", [0, 1, 42, 2**64 - 1])
def test_splitmix64_matches_integer_reference(seed):
    assert splitmix64(seed, 50).tolist() == splitmix64_scalar(seed, 50)


def test_splitmix64_published_first_value():
    assert int(splitmix64(0, 1)[0]) == 0xE220A8397B1DCDAF


def test_uniform_range():
    u = splitmix64_uniform(7, 10000)
    assert u.min() >= 0 and u.max() < 1
    assert abs(u.mean() - 0.5) < 0.02


# ----------------------------------------------------------------- intensity


def test_intensity_identity(camera_crop):
    assert adjust_intensity(camera_crop, 1, 0) == camera_crop


def test_intensity_bias():
    out = adjust_intensity(GrayImage(np.full((3, 4), 100.0)), 1, 30)
    assert np.all(out.pixels == 130)


def test_intensity_saturates():
    assert adjust_intensity(GrayImage([[200.0]]), 1.2, 25).pixels[0, 0] == 255


@pytest.mark.parametrize("gain", [0, -1])
def test_intensity_rejects_gain(gain):
    with pytest.raises(ValueError):
        adjust_intensity(GrayImage([[1.0]]), gain, 0)


# ------------------------------------------------------------------ rotation


def test_rotate_zero_is_identity(camera_crop):
    assert rotate(camera_crop, 0) == camera_crop


def test_four_quarter_turns(rng):
    img = GrayImage(rng.integers(0, 256, (9, 14)).astype(float))
    sq = GrayImage(rng.integers(0, 256, (11, 11)).astype(float))
    out = sq
    for _ in range(4):
        out = rotate(out, 90)
    assert out == sq
    # rectangular canvases lose corners, but 360 in one step is exact
    assert rotate(img, 360) == img


def test_rotate_90_on_2x2_matches_inverse_map():
    arr = [[1.0, 2.0], [3.0, 4.0]]
    out = rotate(GrayImage(arr), 90).pixels
    cx = cy = 0.5
    expect = np.zeros((2, 2))
    t = math.radians(90)
    for y in range(2):
        for x in range(2):
            # destination = centre + R (source - centre), R clockwise on a y-down grid
            dx, dy = x - cx, y - cy
            sx = cx + math.cos(t) * dx + math.sin(t) * dy
            sy = cy - math.sin(t) * dx + math.cos(t) * dy
            expect[y, x] = bilinear_loop(arr, round(sx, 12), round(sy, 12))
    np.testing.assert_array_equal(out, expect)
    assert sorted(out.ravel()) == [1, 2, 3, 4]


def test_positive_angle_turns_clockwise():
    arr = np.zeros((21, 21))
    arr[10, 15] = 255  # right of centre
    out = rotate(GrayImage(arr), 90).pixels
    assert out[15, 10] == 255  # below centre: clockwise on screen


@pytest.mark.parametrize("angle", [17.0, 45.0, -60.0])
def test_rotation_round_trip(smooth, angle):
    back = rotate(rotate(smooth, angle), -angle).pixels
    h, w = smooth.shape
    yy, xx = np.mgrid[0:h, 0:w]
    inner = np.hypot(xx - (w - 1) / 2, yy - (h - 1) / 2) < min(h, w) / 2 - 2
    assert np.abs(back - smooth.pixels)[inner].max() <= 2.0


# ------------------------------------------------------------------- scaling


def test_scale_identity_and_size(camera_crop):
    assert scale(camera_crop, 1) == camera_crop
    assert scale(GrayImage(np.zeros((80, 100))), 2).shape == (160, 200)


def test_scale_constant():
    out = scale(GrayImage(np.full((7, 5), 50.0)), 2)
    assert np.all(out.pixels == 50)


def test_scale_samples_bilinear(smooth):
    out = scale(smooth, 2).pixels
    a = smooth.pixels.tolist()
    h, w = smooth.shape
    for x, y in [(0, 0), (5, 9), (33, 17), (127, 95)]:
        expect = bilinear_loop(a, min(x / 2, w - 1), min(y / 2, h - 1))
        assert out[y, x] == pytest.approx(expect, abs=1e-9)


@pytest.mark.parametrize("factor", [0, -2, 0.001])
def test_scale_rejects(factor):
    with pytest.raises(ValueError):
        scale(GrayImage(np.zeros((10, 10))), factor)


# ------------------------------------------------------------------- shearing


def test_shear_identity(camera_crop):
    out = shear(camera_crop, 0)
    assert out == camera_crop


def test_shear_moves_point():
    arr = np.zeros((30, 30))
    arr[20, 10] = 255
    out = shear(GrayImage(arr), 0.5).pixels
    assert out[20, 20] == 255
    assert out.sum() == 255


@settings(max_examples=40, deadline=None)
@given(st.floats(-2, 2, allow_nan=False).filter(lambda k: k != 0), st.integers(1, 20), st.integers(1, 20))
def test_shear_width_and_row0(kx, h, w):
    arr = (np.arange(h * w).reshape(h, w) % 250).astype(float)
    out = shear(GrayImage(arr), kx)
    assert out.shape == (h, w + math.ceil(abs(kx) * (h - 1)))
    if kx > 0:
        np.testing.assert_array_equal(out.pixels[0, :w], arr[0])


def test_negative_shear_keeps_content():
    arr = np.zeros((11, 5))
    arr[10, 0] = 255
    arr[0, 4] = 100
    out = shear(GrayImage(arr), -0.5).pixels
    assert out.shape == (11, 10)
    assert out[10, 0] == 255 and out[0, 9] == 100


# ------------------------------------------------------------------- fisheye


def test_fisheye_identity(camera_crop):
    assert fisheye(camera_crop, 0) == camera_crop


@pytest.mark.parametrize("k", [0.1, 0.5, 3.0])
def test_fisheye_centre_fixed(rng, k):
    img = GrayImage(rng.integers(0, 256, (21, 31)).astype(float))
    assert fisheye(img, k).pixels[10, 15] == img.pixels[10, 15]


def test_fisheye_radial_map_example():
    assert fisheye_source_radius(0.8, 0.5) == pytest.approx(1.056)
    # wide image: pixel on the horizontal axis at r ~ 0.8 samples beyond the edge
    h, w = 21, 201
    img = GrayImage(np.full((h, w), 255.0))
    out = fisheye(img, 0.5).pixels
    cx, cy = 100, 10
    half_diag = math.hypot(cx, cy)
    x = cx + 80
    r = 80 / half_diag
    src = cx + 80 * (1 + 0.5 * r * r)
    assert src > w - 1 and out[cy, x] == 0
    assert out[cy, cx + 20] == 255


def test_fisheye_matches_oracle(smooth):
    k = 0.5
    out = fisheye(smooth, k).pixels
    h, w = smooth.shape
    cx, cy = (w - 1) / 2, (h - 1) / 2
    hd = math.hypot(cx, cy)
    a = smooth.pixels.tolist()
    for x, y in [(0, 0), (10, 30), (40, 20), (63, 47), (31, 23)]:
        r = math.hypot(x - cx, y - cy) / hd
        g = fisheye_source_radius(r, k) / r if r else 1.0
        assert out[y, x] == pytest.approx(bilinear_loop(a, cx + (x - cx) * g, cy + (y - cy) * g), abs=1e-9)


@settings(max_examples=100)
@given(st.floats(0, 2), st.floats(0, 5))
def test_fisheye_never_pulls_inward(r, k):
    assert fisheye_source_radius(r, k) >= r


def test_fisheye_rejects_negative():
    with pytest.raises(ValueError):
        fisheye(GrayImage(np.zeros((3, 3))), -0.1)


# --------------------------------------------------------------------- noise


def test_noise_zero_density(camera_crop):
    assert salt_pepper(camera_crop, 0, 5) == camera_crop


def test_noise_exact_count():
    arr = np.full((100, 100), 128.0)
    out = salt_pepper(GrayImage(arr), 0.3, 42).pixels
    changed = out != arr
    assert changed.sum() == 3000
    assert set(np.unique(out[changed])) == {0.0, 255.0}
    assert (out == 255).sum() == 1500


def test_noise_salt_gets_odd_pixel():
    out = salt_pepper(GrayImage(np.full((1, 7), 100.0)), 3 / 7, 1).pixels
    assert (out == 255).sum() == 2 and (out == 0).sum() == 1


def test_noise_deterministic_and_seeded(camera_crop):
    a = salt_pepper(camera_crop, 0.3, 42)
    assert a == salt_pepper(camera_crop, 0.3, 42)
    assert a != salt_pepper(camera_crop, 0.3, 43)


def test_noise_positions_distinct_and_match_sorted_keys():
    idx = noise_positions(500, 200, 9)
    assert len(set(idx.tolist())) == 200
    keys = splitmix64_scalar(9, 500)
    assert idx.tolist() == sorted(range(500), key=lambda i: keys[i])[:200]


@pytest.mark.parametrize("density", [-0.1, 1.1])
def test_noise_rejects_density(density):
    with pytest.raises(ValueError):
        salt_pepper(GrayImage(np.zeros((3, 3))), density)


# ------------------------------------------------------------------ scenario


@pytest.mark.parametrize(
    "text",
    ["rotation:angle=45", "scaling:factor=2", "shearing:kx=0.5", "fisheye:k=0.5", "noise:density=0.3,seed=42", "intensity:gain=1,bias=30", "identity"],
)
def test_scenario_text_round_trip(text):
    sc = Scenario.parse(text)
    assert Scenario.parse(str(sc)) == sc


def test_scenario_string_forms():
    assert str(Scenario("rotation", {"angle": 45})) == "rotation:angle=45"
    assert str(Scenario("noise", {"density": 0.3}, 42)) == "noise:density=0.3,seed=42"
    assert str(Scenario("intensity")) == "intensity:gain=1,bias=30"
    assert str(Scenario("identity")) == "identity"


@pytest.mark.parametrize(
    "kind, params, seed",
    [("blur", {}, 0), ("identity", {"angle": 1}, 0), ("rotation", {"factor": 2}, 0), ("noise", {"density": 2}, 0), ("scaling", {"factor": 0}, 0), ("noise", {}, -1)],
)
def test_scenario_validation(kind, params, seed):
    with pytest.raises(ValueError):
        Scenario(kind, params, seed)


@pytest.mark.parametrize(
    "kind, params",
    [("identity", {}), ("intensity", {"gain": 1, "bias": 0}), ("rotation", {"angle": 0}), ("scaling", {"factor": 1}), ("shearing", {"kx": 0}), ("fisheye", {"k": 0}), ("noise", {"density": 0})],
)
def test_identity_parameters_are_bit_exact(camera_crop, kind, params):
    assert Scenario(kind, params).apply(camera_crop) == camera_crop


def test_defaults_cover_every_kind():
    assert set(DEFAULT_PARAMS) == set(KINDS)
    for kind in KINDS:
        Scenario(kind).apply(GrayImage(np.full((8, 8), 10.0)))
