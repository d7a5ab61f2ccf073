import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from walkers import evalkit, imaging, nms, softcontour as sc
from walkers.errors import InvalidInputError, InvalidParameterError


def test_ridge_thins_to_crest():
    soft = np.zeros((21, 21))
    soft[:, 9], soft[:, 10], soft[:, 11] = 0.5, 1.0, 0.5
    out = nms.nms_thin(soft)
    assert (out[2:-2, 10] == 1.0).all()
    assert not out[2:-2, [9, 11]].any()


def test_zero_map_and_isolated_peak():
    assert not nms.nms_thin(np.zeros((9, 9))).any()
    soft = np.zeros((9, 9))
    soft[4, 4] = 0.8
    assert nms.nms_thin(soft)[4, 4] == 0.8


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_thinning_never_raises_values(seed):
    soft = np.random.default_rng(seed).random((16, 16))
    out = nms.nms_thin(soft)
    assert (out <= soft).all()
    assert not (out > 0)[soft == 0].any()


def test_gap_opens_after_thinning():
    spec = sc.SynthSpec(shape="disk", width=96, height=96, center=(48.0, 48.0), radius=30.0,
                        blur_sigma=1.5, gaps=[sc.Gap(0.3, 12.0, 0.3)])
    case = sc.synth_case(spec, 0)
    thinned = nms.nms_thin(case.soft)
    assert evalkit.closed_shape(case.soft >= 0.2)
    assert not evalkit.closed_shape(thinned >= 0.4)


def test_select_seeds_order_and_ties():
    thinned = np.zeros((5, 6))
    thinned[1, 4], thinned[3, 0], thinned[2, 2] = 0.6, 0.9, 0.7
    seeds = nms.select_seeds(thinned, 0.5, 300)
    assert seeds == [((0, 3), 0.9), ((2, 2), 0.7), ((4, 1), 0.6)]
    assert nms.select_seeds(thinned, 0.95, 300) == []
    tie = np.zeros((4, 4))
    tie[2, 1] = tie[0, 3] = 0.8
    assert [p for p, _ in nms.select_seeds(tie, 0.5)] == [(3, 0), (1, 2)]
    assert len(nms.select_seeds(thinned, 0.5, 2)) == 2


def test_select_seeds_rejects_bad_parameters():
    with pytest.raises(InvalidParameterError):
        nms.select_seeds(np.zeros((3, 3)), 0.0)
    with pytest.raises(InvalidParameterError):
        nms.select_seeds(np.zeros((3, 3)), 0.5, 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 0.9), st.floats(0.05, 0.9))
def test_select_seeds_monotone_in_threshold(seed, a, b):
    thinned = np.random.default_rng(seed).random((10, 10))
    lo, hi = sorted((a, b))
    many = {p for p, _ in nms.select_seeds(thinned, lo, 1000)}
    few = {p for p, _ in nms.select_seeds(thinned, hi, 1000)}
    assert few <= many


def test_gt_seed_sampler():
    one = np.zeros((5, 5), dtype=bool)
    one[2, 3] = True
    assert nms.gt_seed_sampler(one, np.random.default_rng(0)) == (3, 2)
    with pytest.raises(InvalidInputError):
        nms.gt_seed_sampler(np.zeros((3, 3), dtype=bool), np.random.default_rng(0))

    contour = np.zeros((10, 10), dtype=bool)
    contour[:, :] = True  # 100 pixels
    a = nms.gt_seed_sampler(contour, np.random.default_rng(4))
    assert a == nms.gt_seed_sampler(contour, np.random.default_rng(4))
    rng = np.random.default_rng(5)
    counts = np.zeros((10, 10))
    for _ in range(10_000):
        x, y = nms.gt_seed_sampler(contour, rng)
        counts[y, x] += 1
    expected = 100.0
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    # 99 degrees of freedom; 99.9th percentile is about 148
    assert chi2 < 148
    assert np.abs(counts - expected).max() <= 3 * np.sqrt(expected * 0.99)


def test_averaged_orientation_on_ridge_crest():
    soft = imaging.gaussian_blur(np.pad(np.ones((1, 31)), ((15, 15), (0, 0))), 1.5)
    orient = nms.averaged_orientation(soft)
    assert abs(abs(orient[15, 15]) - 90.0) < 1.0
