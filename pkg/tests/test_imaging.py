import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from walkers import imaging
from walkers.errors import (
    InvalidInputError,
    InvalidParameterError,
    MalformedImageError,
    MissingFileError,
    OutOfBoundsError,
    UnsupportedFormatError,
)

import oracles

masks = arrays(bool, st.tuples(st.integers(1, 12), st.integers(1, 12)))


def test_wrap_deg():
    assert imaging.wrap_deg(180.0) == 180.0
    assert imaging.wrap_deg(-180.0) == 180.0
    assert imaging.wrap_deg(190.0) == pytest.approx(-170.0)
    assert imaging.wrap_deg(-540.0) == 180.0
    np.testing.assert_allclose(imaging.wrap_deg([0.0, 360.0, -90.0]), [0.0, 0.0, -90.0])


# --- gaussian -------------------------------------------------------------

def test_blur_constant_is_constant():
    out = imaging.gaussian_blur(np.full((9, 11), 0.37), 1.5)
    np.testing.assert_allclose(out, 0.37, atol=1e-12)


def test_blur_impulse_gives_kernel_and_unit_mass():
    src = np.zeros((31, 31))
    src[15, 15] = 1.0
    out = imaging.gaussian_blur(src, 2.0)
    assert out.sum() == pytest.approx(1.0, rel=1e-6)
    k = imaging.gaussian_kernel(2.0)
    assert k.size == 2 * 6 + 1
    np.testing.assert_allclose(out[15, 9:22], k * k[6], atol=1e-12)


def test_blur_matches_dense_oracle():
    rng = np.random.default_rng(3)
    src = rng.random((5, 5))
    expected = oracles.dense_correlate(src, oracles.gaussian_2d(1.0))
    np.testing.assert_allclose(imaging.gaussian_blur(src, 1.0), expected, atol=1e-6)


@pytest.mark.parametrize("sigma", [0.0, -1.0])
def test_blur_rejects_bad_sigma(sigma):
    with pytest.raises(InvalidParameterError):
        imaging.gaussian_blur(np.zeros((4, 4)), sigma)


# --- sobel ----------------------------------------------------------------

def test_sobel_constant_is_zero():
    _, _, mag, _ = imaging.sobel_gradient(np.full((6, 6), 0.8))
    assert not mag.any()


def test_sobel_horizontal_step():
    src = np.zeros((10, 8))
    src[5:] = 1.0
    gx, gy, mag, orient = imaging.sobel_gradient(src)
    edge = mag[4:6, 1:-1]
    assert np.all(edge == mag.max())
    np.testing.assert_allclose(orient[4:6, 1:-1], 90.0)
    assert not mag[:3].any() and not mag[7:].any()


def test_sobel_matches_dense_oracle():
    rng = np.random.default_rng(7)
    src = rng.random((7, 7))
    gx, gy, mag, orient = imaging.sobel_gradient(src)
    ox = oracles.dense_correlate(src, imaging.SOBEL_X)
    oy = oracles.dense_correlate(src, imaging.SOBEL_Y)
    np.testing.assert_allclose(gx, ox, atol=1e-6)
    np.testing.assert_allclose(gy, oy, atol=1e-6)
    np.testing.assert_allclose(mag, np.hypot(ox, oy) / imaging.SOBEL_MAX, atol=1e-6)
    np.testing.assert_allclose(orient, np.degrees(np.arctan2(oy, ox)), atol=1e-6)


def test_sobel_scale_is_max_over_all_binary_windows():
    # the magnitude is convex in the 3x3 window, so the max sits on a vertex of [0,1]^9
    best = 0.0
    for bits in itertools.product((0.0, 1.0), repeat=9):
        win = np.array(bits).reshape(3, 3)
        best = max(best, np.hypot((win * imaging.SOBEL_X).sum(), (win * imaging.SOBEL_Y).sum()))
    assert best == pytest.approx(imaging.SOBEL_MAX)


def test_sobel_too_small():
    with pytest.raises(InvalidInputError):
        imaging.sobel_gradient(np.zeros((2, 5)))


# --- bilinear -------------------------------------------------------------

def test_bilinear_identity_and_midpoint():
    rng = np.random.default_rng(0)
    src = rng.random((5, 6))
    assert imaging.bilinear_sample(src, 3, 2) == src[2, 3]
    two = np.array([[0.0, 1.0]])
    assert imaging.bilinear_sample(two, 0.5, 0.0) == pytest.approx(0.5)


def test_bilinear_matches_four_term_formula():
    rng = np.random.default_rng(11)
    src = rng.random((6, 5))
    for x, y in [(1.25, 2.75), (-0.5, 0.0), (4.5, 5.5), (0.1, -0.3)]:
        assert imaging.bilinear_sample(src, x, y) == pytest.approx(
            oracles.bilinear_4term(src, x, y), abs=1e-9)


def test_bilinear_out_of_bounds():
    with pytest.raises(OutOfBoundsError):
        imaging.bilinear_sample(np.zeros((4, 4)), 3.6, 1.0)


def test_sample_bilinear_far_outside_reads_zero():
    src = np.ones((3, 3))
    assert imaging.sample_bilinear(src, -5.0, 1.0) == 0.0
    assert imaging.sample_bilinear(src, 1.0, 9.0) == 0.0
    assert imaging.sample_bilinear(src, -1.0, 1.0) == 0.0


# --- components and fill ----------------------------------------------------

def test_components_trivial():
    _, areas = imaging.connected_components(np.zeros((4, 4), bool))
    assert areas.size == 0
    _, areas = imaging.connected_components(np.ones((4, 5), bool))
    assert list(areas) == [20]


def test_components_two_blocks():
    m = np.zeros((8, 10), bool)
    m[1:4, 1:4] = True
    m[4:7, 6:9] = True
    labels, areas = imaging.connected_components(m, 8)
    assert sorted(areas) == oracles.union_find_components(m, 8) == [9, 9]
    assert labels[1, 1] == 1 and labels[4, 6] == 2


def test_components_raster_order():
    m = np.zeros((5, 5), bool)
    m[0, 4] = True
    m[2, 0] = True
    labels, _ = imaging.connected_components(m)
    assert labels[0, 4] == 1 and labels[2, 0] == 2


@settings(max_examples=80, deadline=None)
@given(masks)
def test_components_match_union_find(m):
    for conn in (4, 8):
        _, areas = imaging.connected_components(m, conn)
        assert sorted(areas.tolist()) == oracles.union_find_components(m, conn)


@settings(max_examples=80, deadline=None)
@given(masks)
def test_eight_never_more_components_than_four(m):
    assert imaging.connected_components(m, 8)[1].size <= imaging.connected_components(m, 4)[1].size


def test_fill_empty_blocked():
    assert imaging.flood_fill_from_border(np.zeros((5, 5), bool)).all()


def test_fill_ring_and_leaky_ring():
    ring = np.zeros((9, 9), bool)
    ring[2, 2:7] = ring[6, 2:7] = ring[2:7, 2] = ring[2:7, 6] = True
    out = imaging.flood_fill_from_border(ring)
    np.testing.assert_array_equal(out, oracles.bfs_outside(ring))
    assert not out[3:6, 3:6].any()
    leaky = ring.copy()
    leaky[4, 6] = False
    out = imaging.flood_fill_from_border(leaky)
    np.testing.assert_array_equal(out, oracles.bfs_outside(leaky))
    np.testing.assert_array_equal(out, ~leaky)


@settings(max_examples=80, deadline=None)
@given(masks)
def test_fill_matches_bfs_and_avoids_blocked(m):
    out = imaging.flood_fill_from_border(m)
    np.testing.assert_array_equal(out, oracles.bfs_outside(m))
    assert not (out & m).any()


# --- thinning ---------------------------------------------------------------

def test_thin_single_pixel():
    m = np.zeros((5, 5), bool)
    m[2, 2] = True
    np.testing.assert_array_equal(imaging.thin(m), m)


def test_thin_bar_matches_reference():
    m = np.zeros((9, 20), bool)
    m[3:6, 2:18] = True
    out = imaging.thin(m)
    np.testing.assert_array_equal(out, oracles.zhang_suen_reference(m))
    rows = np.nonzero(out.any(axis=1))[0]
    assert rows.tolist() == [4]
    cols = np.nonzero(out[4])[0]
    # Zhang-Suen erodes at most one pixel off each end of a 3-wide bar
    assert cols.min() <= 3 and cols.max() >= 15
    assert np.all(np.diff(cols) == 1)


def test_thin_ring_stays_closed():
    ring = oracles.disk_ring((40, 40), (20, 20), 10, 13)
    out = imaging.thin(ring)
    np.testing.assert_array_equal(out, oracles.zhang_suen_reference(ring))
    assert imaging.enclosed_region(out).any()
    assert imaging.connected_components(out, 8)[1].size == 1


def test_thin_keeps_two_by_two_block():
    m = np.zeros((6, 6), bool)
    m[2:4, 2:4] = True
    out = imaging.thin(m)
    assert out.any()
    assert imaging.connected_components(out, 8)[1].size == 1


@settings(max_examples=100, deadline=None)
@given(masks)
def test_thin_properties(m):
    out = imaging.thin(m)
    assert not (out & ~m).any()
    assert np.array_equal(imaging.thin(out), out)
    # every input 8-component keeps exactly one skeleton component
    labels, areas = imaging.connected_components(m, 8)
    out_labels, out_areas = imaging.connected_components(out, 8)
    assert out_areas.size == areas.size
    assert np.unique(labels[out]).size == areas.size
    # holes are preserved
    holes_in = imaging.connected_components(~np.pad(m, 1), 4)[1].size
    holes_out = imaging.connected_components(~np.pad(out, 1), 4)[1].size
    assert holes_in == holes_out
    padded = np.pad(out, 1)
    nb = sum(np.roll(np.roll(padded, dy, 0), dx, 1)
             for dy in (-1, 0, 1) for dx in (-1, 0, 1) if dy or dx)[1:-1, 1:-1]
    assert not (out & (nb == 8)).any()


# --- PNG --------------------------------------------------------------------

def test_png_scaling(tmp_path):
    arr = np.array([[0.0, 1.0]])
    imaging.save_png(arr, tmp_path / "a.png")
    back = imaging.load_png(tmp_path / "a.png")
    assert back[0, 0] == 0.0 and back[0, 1] == 1.0


def test_png_round_trip_gray_and_rgb(tmp_path):
    rng = np.random.default_rng(5)
    gray = rng.integers(0, 256, (13, 17)) / 255.0
    imaging.save_png(gray, tmp_path / "g.png")
    np.testing.assert_array_equal(imaging.load_png(tmp_path / "g.png"), gray)
    rgb = rng.integers(0, 256, (6, 4, 3)) / 255.0
    imaging.save_png(rgb, tmp_path / "c.png")
    np.testing.assert_array_equal(imaging.load_png(tmp_path / "c.png"), rgb)


def test_png_errors(tmp_path):
    with pytest.raises(MissingFileError):
        imaging.load_png(tmp_path / "nope.png")
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"\x89PNG\r\n\x1a\nnot really")
    with pytest.raises(MalformedImageError):
        imaging.load_png(bad)
    from PIL import Image
    Image.fromarray(np.zeros((4, 4), dtype=np.uint16)).save(tmp_path / "deep.png")
    with pytest.raises(UnsupportedFormatError):
        imaging.load_png(tmp_path / "deep.png")
