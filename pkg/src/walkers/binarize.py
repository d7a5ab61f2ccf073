"""Turn a grayscale refined contour into a closed, one-pixel-wide binary contour.

Candidates are visited from the brightest pixel down. For each one a short
cut is laid across the contour band along the edge gradient; if the cut's two
ends land in the two largest dark regions (inside and outside), the
threshold is lowered until the contour reconnects around the cut.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import imaging
from .errors import (
    EmptyRefinedMapError,
    NoClosedContourError,
    NoClosureError,
    OutOfBoundsError,
    SeparationRejected,
    ZeroGradientError,
)

log = logging.getLogger(__name__)

GRADIENT_SIGMA = 2.0
DEFAULT_MAX_LEN = 15
DEFAULT_TAU_REGION = 0.2


@dataclass(frozen=True)
class SeparationLine:
    anchor: tuple
    direction: float
    cut_pixels: tuple          # ordered from e1 through the anchor to e2
    e1: tuple
    e2: tuple
    reconnect_pair: tuple      # (pixel_1, pixel_2)

    def to_dict(self):
        return {
            "anchor": list(self.anchor),
            "direction": self.direction,
            "e1": list(self.e1),
            "e2": list(self.e2),
            "reconnect_pair": [list(p) for p in self.reconnect_pair],
            "cut_pixels": [list(p) for p in self.cut_pixels],
        }


@dataclass
class ClosureResult:
    threshold: float
    contour: np.ndarray
    separation: SeparationLine
    attempts: int

    def summary(self):
        return {
            "threshold": self.threshold,
            "anchor": list(self.separation.anchor),
            "attempts": self.attempts,
        }


# --- candidates and gradients ---------------------------------------------------

def build_candidates(refined):
    """``[((x, y), value), ...]`` for refined > 0, brightest first, raster order on ties."""
    refined = imaging.as_raster(refined, "refined")
    flat = refined.ravel()
    idx = np.flatnonzero(flat > 0)
    if idx.size == 0:
        raise EmptyRefinedMapError("refined contour is all zero")
    idx = idx[np.argsort(-flat[idx], kind="stable")]
    w = refined.shape[1]
    return [((int(i % w), int(i // w)), float(flat[i])) for i in idx]


def gradient_field(refined, sigma=GRADIENT_SIGMA):
    """Sobel magnitude and orientation of the blurred refined map."""
    _, _, mag, orient = imaging.sobel_gradient(imaging.gaussian_blur(refined, sigma))
    return mag, orient


def edge_gradient_at(refined, p, field=None):
    """Gradient orientation (degrees) at ``p`` of the sigma-2 blurred refined map."""
    refined = np.asarray(refined, dtype=float)
    x, y = p
    if not (0 <= x < refined.shape[1] and 0 <= y < refined.shape[0]):
        raise OutOfBoundsError(f"pixel {p} outside the raster")
    mag, orient = field if field is not None else gradient_field(refined)
    if mag[y, x] <= 1e-12:
        raise ZeroGradientError(f"no gradient at {p}")
    return float(orient[y, x])


# --- separation line ------------------------------------------------------------

def _bresenham(x0, y0, x1, y1):
    """4-connected Bresenham line from (x0, y0) to (x1, y1), start excluded.

    A diagonal step gets an extra pixel on the x-first corner so that the
    line cannot be crossed by an 8-connected path.
    """
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x1 > x0 else -1
    sy = 1 if y1 > y0 else -1
    err = dx + dy
    x, y = x0, y0
    out = []
    while (x, y) != (x1, y1):
        e2 = 2 * err
        step_x = e2 >= dy
        step_y = e2 <= dx
        if step_x and step_y:
            out.append((x + sx, y))
        if step_x:
            err += dy
            x += sx
        if step_y:
            err += dx
            y += sy
        out.append((x, y))
    return out


def _arm(refined, anchor, ux, uy, max_len, tau_region):
    """Walk one arm; returns its pixels (anchor excluded) and whether it exited the band."""
    h, w = refined.shape
    scale = max_len / max(abs(ux), abs(uy))
    end = (anchor[0] + int(round(ux * scale)), anchor[1] + int(round(uy * scale)))
    pixels = []
    for x, y in _bresenham(anchor[0], anchor[1], *end):
        if not (0 <= x < w and 0 <= y < h):
            return pixels, True
        pixels.append((x, y))
        if refined[y, x] < tau_region:
            return pixels, True
    return pixels, False


def _side(p, anchor, ux, uy):
    # sign of the component of (p - anchor) across the line direction
    v = (p[0] - anchor[0]) * -uy + (p[1] - anchor[1]) * ux
    return 0 if abs(v) < 1e-9 else (1 if v > 0 else -1)


def _cut_neighbours(cut, shape):
    h, w = shape
    cut_set = set(cut)
    out = set()
    for x, y in cut:
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                q = (x + dx, y + dy)
                if q not in cut_set and 0 <= q[0] < w and 0 <= q[1] < h:
                    out.add(q)
    return sorted(out, key=lambda q: (q[1], q[0]))


def _best_pair(values, cut, anchor, direction, allowed=None):
    """Brightest pixel adjacent to the cut on each side, or None."""
    rad = np.radians(direction)
    ux, uy = np.cos(rad), np.sin(rad)
    best = {1: None, -1: None}
    for q in _cut_neighbours(cut, values.shape):
        if allowed is not None and not allowed[q[1], q[0]]:
            continue
        v = values[q[1], q[0]]
        if v <= 0:
            continue
        s = _side(q, anchor, ux, uy)
        if s and (best[s] is None or v > best[s][1]):
            best[s] = (q, v)
    if best[1] is None or best[-1] is None:
        return None
    return best[1][0], best[-1][0]


def build_separation_line(refined, p_x, grad, max_len=DEFAULT_MAX_LEN,
                          tau_region=DEFAULT_TAU_REGION):
    """Cut across the contour band at ``p_x`` along the gradient direction.

    Raises SeparationRejected (reason ArmTooLong or NoReconnectPair).
    """
    refined = np.asarray(refined, dtype=float)
    anchor = (int(p_x[0]), int(p_x[1]))
    rad = np.radians(grad)
    ux, uy = float(np.cos(rad)), float(np.sin(rad))
    fwd, ok1 = _arm(refined, anchor, ux, uy, max_len, tau_region)
    back, ok2 = _arm(refined, anchor, -ux, -uy, max_len, tau_region)
    if not (ok1 and ok2):
        raise SeparationRejected(SeparationRejected.ARM_TOO_LONG)
    cut = tuple(back[::-1]) + (anchor,) + tuple(fwd)
    pair = _best_pair(refined, cut, anchor, grad)
    if pair is None:
        raise SeparationRejected(SeparationRejected.NO_RECONNECT_PAIR)
    return SeparationLine(anchor, float(grad), cut, cut[0], cut[-1], pair)


class RegionIndex:
    """Sub-threshold 4-components of a refined map, ranked by area."""

    def __init__(self, refined, tau_region=DEFAULT_TAU_REGION):
        labels, areas = imaging.connected_components(np.asarray(refined) < tau_region, 4)
        self.labels = labels
        # label ids of the two largest components (ties: lower label first)
        order = np.argsort(-areas, kind="stable")[:2] + 1
        self.top_two = tuple(int(i) for i in order)

    def validates(self, line):
        if len(self.top_two) < 2:
            return False
        l1 = self.labels[line.e1[1], line.e1[0]]
        l2 = self.labels[line.e2[1], line.e2[0]]
        return l1 != l2 and {int(l1), int(l2)} == set(self.top_two)


def validate_separation(line, refined, tau_region=DEFAULT_TAU_REGION):
    """True when the cut's ends sit in the two largest dark regions, one each."""
    return RegionIndex(refined, tau_region).validates(line)


# --- closure ---------------------------------------------------------------------

def is_closed(contour, line):
    """Do the reconnect pixels stay 8-connected once the cut is removed?"""
    contour = np.asarray(contour, dtype=bool)
    if not contour.any():
        return False
    (x1, y1), (x2, y2) = line.reconnect_pair
    if not (contour[y1, x1] and contour[y2, x2]):
        return False
    cut = np.array(line.cut_pixels)
    # crop to the bounding box of the contour to keep labelling cheap
    ys, xs = np.nonzero(contour)
    y0, y1b = ys.min(), ys.max() + 1
    x0, x1b = xs.min(), xs.max() + 1
    work = contour[y0:y1b, x0:x1b].copy()
    inside = (cut[:, 0] >= x0) & (cut[:, 0] < x1b) & (cut[:, 1] >= y0) & (cut[:, 1] < y1b)
    work[cut[inside, 1] - y0, cut[inside, 0] - x0] = False
    labels, _ = imaging.connected_components(work, 8)
    a = labels[y1 - y0, x1 - x0]
    return bool(a) and a == labels[y2 - y0, x2 - x0]


def _reanchor(line, refined, contour):
    """The same cut with the reconnect pair chosen among ``contour`` pixels."""
    pair = _best_pair(refined, line.cut_pixels, line.anchor, line.direction, allowed=contour)
    return None if pair is None else replace(line, reconnect_pair=pair)


def _thinned_closure(refined, line, t):
    """Thinned binarization at ``t`` if it closes around the cut, else None."""
    skeleton = imaging.thin(refined >= t)
    line2 = _reanchor(line, refined, skeleton)
    if line2 is None or not is_closed(skeleton, line2):
        return None
    labels, _ = imaging.connected_components(skeleton, 8)
    p = line2.reconnect_pair[0]
    contour = labels == labels[p[1], p[0]]
    if not imaging.enclosed_region(contour).any():
        return None
    return contour, line2


def threshold_levels(refined):
    """Unique positive refined values, highest first."""
    vals = np.unique(np.asarray(refined, dtype=float))
    return vals[vals > 0][::-1]


def first_closing_index(refined, line, levels=None):
    """Binary search for the first (highest) level whose raw binarization closes."""
    levels = threshold_levels(refined) if levels is None else levels
    lo, hi = 0, len(levels)
    while lo < hi:
        mid = (lo + hi) // 2
        if is_closed(refined >= levels[mid], line):
            hi = mid
        else:
            lo = mid + 1
    return lo


def first_closing_index_linear(refined, line, levels=None):
    """Reference sweep for :func:`first_closing_index`."""
    levels = threshold_levels(refined) if levels is None else levels
    for i, t in enumerate(levels):
        if is_closed(refined >= t, line):
            return i
    return len(levels)


def closure_threshold_search(refined, line):
    """Largest threshold whose thinned binarization is closed around ``line``.

    Returns ``(t, contour, line)``; the returned line carries the reconnect
    pair used on the thinned contour. Raises NoClosureError.
    """
    refined = np.asarray(refined, dtype=float)
    levels = threshold_levels(refined)
    start = first_closing_index(refined, line, levels)
    for i in range(start, len(levels)):
        found = _thinned_closure(refined, line, levels[i])
        if found is not None:
            return float(levels[i]), found[0], found[1]
    raise NoClosureError("no threshold closes the contour")


def binarize_contour(refined, max_len=DEFAULT_MAX_LEN, tau_region=DEFAULT_TAU_REGION,
                     sigma=GRADIENT_SIGMA):
    """Walk candidates brightest-first until one yields a closed contour."""
    refined = imaging.as_raster(refined, "refined")
    candidates = build_candidates(refined)
    field = gradient_field(refined, sigma)
    regions = RegionIndex(refined, tau_region)
    attempts = 0
    for p, _ in candidates:
        try:
            grad = edge_gradient_at(refined, p, field)
            line = build_separation_line(refined, p, grad, max_len, tau_region)
        except (ZeroGradientError, SeparationRejected):
            attempts += 1
            continue
        if not regions.validates(line):
            attempts += 1
            continue
        try:
            t, contour, line = closure_threshold_search(refined, line)
        except NoClosureError:
            attempts += 1
            continue
        log.debug("closed at t=%.4f after %d rejected candidates", t, attempts)
        return ClosureResult(t, contour, line, attempts)
    raise NoClosedContourError(f"no candidate closed the contour ({attempts} tried)")
