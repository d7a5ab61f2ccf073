"""Orientation-aware non-maximum suppression and tracker seed selection."""
from __future__ import annotations

import numpy as np

from . import imaging
from .errors import InvalidInputError, InvalidParameterError

DEFAULT_TAU_SEED = 0.5
DEFAULT_MAX_SEEDS = 300
ORIENTATION_SIGMA = 1.0


def smoothed_orientation(soft, sigma=ORIENTATION_SIGMA):
    """Sobel gradient orientation (degrees) of the Gaussian-smoothed map."""
    return imaging.sobel_gradient(imaging.gaussian_blur(soft, sigma))[3]


def averaged_orientation(soft, sigma=ORIENTATION_SIGMA, window=2.0):
    """Gradient orientation averaged over a Gaussian window (doubled angles).

    On the crest of a ridge the pointwise gradient vanishes and its angle is
    noise; averaging the structure tensor recovers the ridge normal there.
    Returned in (-90, 90] since the sign is lost.
    """
    gx, gy, _, _ = imaging.sobel_gradient(imaging.gaussian_blur(soft, sigma))
    jxx = imaging.gaussian_blur(gx * gx, window)
    jyy = imaging.gaussian_blur(gy * gy, window)
    jxy = imaging.gaussian_blur(gx * gy, window)
    return imaging.wrap_deg(0.5 * np.degrees(np.arctan2(2 * jxy, jxx - jyy)))


def nms_thin(soft):
    """Keep a pixel only where it is >= both neighbours along the gradient.

    Neighbours sit one pixel away along the gradient orientation of the
    sigma-1 smoothed map and are read by bilinear interpolation.
    """
    soft = imaging.as_raster(soft, "soft")
    if soft.shape[0] < 3 or soft.shape[1] < 3:
        return soft.copy()
    theta = np.radians(smoothed_orientation(soft))
    yy, xx = np.mgrid[:soft.shape[0], :soft.shape[1]].astype(float)
    dx, dy = np.cos(theta), np.sin(theta)
    ahead = imaging.sample_bilinear(soft, xx + dx, yy + dy)
    behind = imaging.sample_bilinear(soft, xx - dx, yy - dy)
    keep = (soft >= ahead) & (soft >= behind)
    return np.where(keep, soft, 0.0)


def select_seeds(thinned, tau_seed=DEFAULT_TAU_SEED, max_seeds=DEFAULT_MAX_SEEDS):
    """Pixels with value >= tau_seed, strongest first, at most ``max_seeds``.

    Returns a list of ``((x, y), value)``; equal values keep raster-scan order.
    """
    if not 0.0 < tau_seed < 1.0:
        raise InvalidParameterError(f"tau_seed must be in (0, 1), got {tau_seed}")
    if max_seeds < 1:
        raise InvalidParameterError(f"max_seeds must be >= 1, got {max_seeds}")
    thinned = np.asarray(thinned, dtype=float)
    flat = thinned.ravel()
    idx = np.flatnonzero(flat >= tau_seed)
    order = idx[np.argsort(-flat[idx], kind="stable")][:max_seeds]
    w = thinned.shape[1]
    return [((int(i % w), int(i // w)), float(flat[i])) for i in order]


def gt_seed_sampler(gt_contour, rng):
    """A uniformly random ground-truth contour pixel as ``(x, y)``."""
    ys, xs = np.nonzero(np.asarray(gt_contour, dtype=bool))
    if ys.size == 0:
        raise InvalidInputError("ground-truth contour is empty")
    i = int(rng.integers(ys.size))
    return int(xs[i]), int(ys[i])
