"""Soft object-contour maps: synthetic ground truth, file input and a fallback.

The deep contour detector is not part of this package. Soft maps either come
from disk, from the synthetic generator below (which also yields the ground
truth needed for evaluation), or from a plain Sobel edge map.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from . import imaging
from .errors import InvalidSpecError

SYNTH_SPEC_VERSION = 1
SHAPES = ("disk", "rectangle", "polygon", "blob")
MARGIN = 8


@dataclass
class Gap:
    """A stretch of boundary whose soft response is attenuated.

    ``position`` is the start as a fraction of the boundary length, measured
    clockwise from the first boundary pixel in raster order.
    """
    position: float
    length: float
    residual: float


@dataclass
class SynthSpec:
    shape: str = "disk"
    width: int = 640
    height: int = 480
    center: tuple = (320.0, 240.0)
    radius: float = 100.0           # disk radius, blob base radius
    half_size: tuple = (120.0, 80.0)  # rectangle half width / half height
    angle: float = 0.0              # rectangle rotation, degrees
    vertices: list = field(default_factory=list)  # polygon, (x, y) pairs
    lobes: int = 5                  # blob
    lobe_depth: float = 0.25
    lobe_phase: float = 0.0
    blur_sigma: float = 1.5
    noise_sigma: float = 0.0
    gaps: list = field(default_factory=list)
    distractors: int = 0
    foreground: tuple = (0.75, 0.6, 0.5)
    background: tuple = (0.25, 0.3, 0.35)

    def validate(self):
        if self.shape not in SHAPES:
            raise InvalidSpecError(f"unknown shape {self.shape!r}; expected one of {SHAPES}")
        if self.width < 2 * MARGIN + 4 or self.height < 2 * MARGIN + 4:
            raise InvalidSpecError("raster too small for the required margin")
        if not self.blur_sigma > 0:
            raise InvalidSpecError("blur_sigma must be positive")
        if self.noise_sigma < 0:
            raise InvalidSpecError("noise_sigma must be non-negative")
        if self.distractors < 0:
            raise InvalidSpecError("distractors must be non-negative")
        for g in self.gaps:
            if not 0.0 <= g.residual < 1.0:
                raise InvalidSpecError(f"gap residual must be in [0, 1), got {g.residual}")
            if g.length <= 0:
                raise InvalidSpecError("gap length must be positive")
        if self.shape == "polygon":
            _check_convex(self.vertices)
        return self

    def to_dict(self):
        d = asdict(self)
        d["synth_spec_version"] = SYNTH_SPEC_VERSION
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        version = d.pop("synth_spec_version", None)
        if version != SYNTH_SPEC_VERSION:
            raise InvalidSpecError(f"unsupported synth_spec_version {version!r}")
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidSpecError(f"unknown SynthSpec keys: {sorted(unknown)}")
        try:
            d["gaps"] = [g if isinstance(g, Gap) else Gap(**g) for g in d.get("gaps", [])]
        except TypeError as exc:
            raise InvalidSpecError(f"bad gap entry: {exc}") from exc
        for key in ("center", "half_size", "foreground", "background"):
            if key in d:
                d[key] = tuple(d[key])
        if "vertices" in d:
            d["vertices"] = [tuple(v) for v in d["vertices"]]
        return cls(**d).validate()

    @classmethod
    def from_json(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise InvalidSpecError(f"spec is not valid JSON: {exc}") from exc


class SynthCase(NamedTuple):
    image: np.ndarray
    soft: np.ndarray
    gt_mask: np.ndarray
    gt_contour: np.ndarray


def _check_convex(vertices):
    v = np.asarray(vertices, dtype=float)
    if v.ndim != 2 or v.shape[0] < 3 or v.shape[1] != 2:
        raise InvalidSpecError("polygon needs at least 3 (x, y) vertices")
    e = np.roll(v, -1, axis=0) - v
    cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
    if not (np.all(cross > 0) or np.all(cross < 0)):
        raise InvalidSpecError("polygon vertices must form a strictly convex polygon")


def _inside_polygon(vertices, xx, yy):
    """Even-odd rule, vectorized over the pixel grid."""
    v = np.asarray(vertices, dtype=float)
    inside = np.zeros(xx.shape, dtype=bool)
    for (x1, y1), (x2, y2) in zip(v, np.roll(v, -1, axis=0)):
        crosses = (y1 > yy) != (y2 > yy)
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = x1 + (yy - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (xx < xc)
    return inside


def shape_mask(spec):
    """Rasterize the ground-truth object of ``spec`` (pixel centres)."""
    yy, xx = np.mgrid[:spec.height, :spec.width].astype(float)
    cx, cy = spec.center
    if spec.shape == "disk":
        if spec.radius < 3:
            raise InvalidSpecError("disk radius must be at least 3 pixels")
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= spec.radius ** 2
    elif spec.shape == "rectangle":
        hw, hh = spec.half_size
        if min(hw, hh) < 3:
            raise InvalidSpecError("rectangle half sizes must be at least 3 pixels")
        a = math.radians(spec.angle)
        u = (xx - cx) * math.cos(a) + (yy - cy) * math.sin(a)
        v = -(xx - cx) * math.sin(a) + (yy - cy) * math.cos(a)
        mask = (np.abs(u) <= hw) & (np.abs(v) <= hh)
    elif spec.shape == "polygon":
        mask = _inside_polygon(spec.vertices, xx, yy)
    else:
        if spec.radius < 3 or not 0 <= spec.lobe_depth < 1:
            raise InvalidSpecError("blob needs radius >= 3 and lobe_depth in [0, 1)")
        theta = np.arctan2(yy - cy, xx - cx)
        r = spec.radius * (1.0 + spec.lobe_depth * np.cos(spec.lobes * theta + spec.lobe_phase))
        mask = np.hypot(xx - cx, yy - cy) <= r

    if mask.sum() < 30:
        raise InvalidSpecError("shape is degenerate (fewer than 30 pixels)")
    ys, xs = np.nonzero(mask)
    if (xs.min() < MARGIN or ys.min() < MARGIN
            or xs.max() > spec.width - 1 - MARGIN or ys.max() > spec.height - 1 - MARGIN):
        raise InvalidSpecError(f"shape must keep a {MARGIN}-pixel margin to the border")
    labels, areas = imaging.connected_components(mask, 4)
    if areas.size != 1:
        raise InvalidSpecError("shape must be a single 4-connected region")
    if imaging.enclosed_region(mask).any():
        raise InvalidSpecError("shape must not contain holes")
    return mask


def arc_positions(chain):
    """Cumulative arc length at each chain pixel and the closed total length."""
    pts = np.asarray(chain, dtype=float)
    steps = np.hypot(*(np.roll(pts, -1, axis=0) - pts).T)
    arc = np.concatenate([[0.0], np.cumsum(steps[:-1])])
    return arc, float(steps.sum())


def _gap_attenuation(contour, chain, gaps, shape):
    """Per-pixel multiplier: ``residual`` where the nearest boundary pixel is in a gap."""
    factor = np.ones(shape)
    if not gaps:
        return factor
    arc, total = arc_positions(chain)
    index = np.full(shape, -1, dtype=np.int64)
    xs = np.array([p[0] for p in chain])
    ys = np.array([p[1] for p in chain])
    index[ys, xs] = np.arange(len(chain))
    _, (iy, ix) = ndimage.distance_transform_edt(~contour, return_indices=True)
    nearest_arc = arc[index[iy, ix]]
    for g in gaps:
        start = (g.position % 1.0) * total
        offset = np.mod(nearest_arc - start, total)
        factor = np.where(offset < g.length, np.minimum(factor, g.residual), factor)
    return factor


def _distractor_strokes(spec, gt_mask, rng):
    strokes = np.zeros((spec.height, spec.width))
    if spec.distractors == 0:
        return strokes
    keep_out = ndimage.binary_dilation(gt_mask, iterations=12)
    placed = 0
    for _ in range(50 * spec.distractors):
        if placed == spec.distractors:
            break
        x0 = rng.uniform(MARGIN, spec.width - MARGIN)
        y0 = rng.uniform(MARGIN, spec.height - MARGIN)
        a = rng.uniform(0, 2 * math.pi)
        length = rng.uniform(8, 25)
        t = np.linspace(0, length, int(length * 2) + 2)
        px = np.round(x0 + t * math.cos(a)).astype(int)
        py = np.round(y0 + t * math.sin(a)).astype(int)
        ok = (px >= 0) & (px < spec.width) & (py >= 0) & (py < spec.height)
        if not ok.all() or keep_out[py, px].any():
            continue
        strokes[py, px] = np.maximum(strokes[py, px], rng.uniform(0.3, 0.8))
        placed += 1
    return strokes


def synth_case(spec, seed=0):
    """Generate image, soft contour map and ground truth for ``spec``.

    Deterministic for a given (spec, seed).
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    gt_mask = shape_mask(spec)
    gt_contour = imaging.inner_boundary(gt_mask)
    chain = imaging.trace_chain(gt_mask)

    blurred = imaging.gaussian_blur(gt_contour.astype(float), spec.blur_sigma)
    soft = blurred / blurred.max()
    soft = soft * _gap_attenuation(gt_contour, chain, spec.gaps, soft.shape)
    strokes = _distractor_strokes(spec, gt_mask, rng)
    if strokes.any():
        s = imaging.gaussian_blur(strokes, spec.blur_sigma)
        peak = imaging.gaussian_blur((strokes > 0).astype(float), spec.blur_sigma).max()
        soft = np.maximum(soft, s / peak)
    if spec.noise_sigma > 0:
        soft = soft + rng.normal(0.0, spec.noise_sigma, soft.shape)
    soft = np.clip(soft, 0.0, 1.0)

    fg = np.asarray(spec.foreground, dtype=float)
    bg = np.asarray(spec.background, dtype=float)
    image = np.where(gt_mask[..., None], fg, bg)
    if spec.noise_sigma > 0:
        image = image + rng.normal(0.0, spec.noise_sigma, image.shape)
    image = np.clip(image, 0.0, 1.0)
    return SynthCase(image, soft, gt_mask, gt_contour)


def random_spec(rng, shape=None, width=640, height=480, blur_sigma=1.5, noise_sigma=0.05,
                gap_residual=0.3, gap_count=1, gap_length=12.0, distractors=0):
    """Draw a random valid SynthSpec; used by batch generation and tests."""
    if shape is None:
        shape = SHAPES[int(rng.integers(len(SHAPES)))]
    if shape not in SHAPES:
        raise InvalidSpecError(f"unknown shape {shape!r}; expected one of {SHAPES}")
    small = min(width, height)
    gaps = [Gap(float(rng.uniform(0, 1)), float(gap_length), float(gap_residual))
            for _ in range(gap_count)]
    for _ in range(100):
        radius = float(rng.uniform(0.18, 0.36) * small)
        radius = min(radius, (small / 2 - MARGIN) / 1.3 - 1.0)
        cx = float(rng.uniform(radius * 1.3 + MARGIN, width - radius * 1.3 - MARGIN))
        cy = float(rng.uniform(radius * 1.3 + MARGIN, height - radius * 1.3 - MARGIN))
        spec = SynthSpec(shape=shape, width=width, height=height, center=(cx, cy), radius=radius,
                         blur_sigma=blur_sigma, noise_sigma=noise_sigma, gaps=gaps,
                         distractors=distractors)
        if shape == "rectangle":
            spec.half_size = (float(radius * rng.uniform(0.6, 1.0)),
                              float(radius * rng.uniform(0.4, 0.9)))
            spec.angle = float(rng.uniform(-90, 90))
        elif shape == "polygon":
            n = int(rng.integers(3, 9))
            cuts = np.sort(rng.uniform(0, 2 * math.pi, n))
            # reject polygons with a nearly flat vertex or a very short edge
            if np.min(np.diff(np.concatenate([cuts, [cuts[0] + 2 * math.pi]]))) < 0.35:
                continue
            spec.vertices = [(cx + radius * math.cos(t), cy + radius * math.sin(t)) for t in cuts]
        elif shape == "blob":
            spec.lobes = int(rng.integers(3, 7))
            spec.lobe_depth = float(rng.uniform(0.1, 0.22))
            spec.lobe_phase = float(rng.uniform(0, 2 * math.pi))
        try:
            spec.validate()
            shape_mask(spec)
        except InvalidSpecError:
            continue
        return spec
    raise InvalidSpecError("could not draw a valid random spec")


def fallback_edge_map(image):
    """Detector stand-in: max per-channel Sobel magnitude, smoothed, peak 1."""
    image = imaging.as_image(image)
    mag = np.max([imaging.sobel_gradient(image[..., c])[2] for c in range(3)], axis=0)
    out = imaging.gaussian_blur(mag, 1.0)
    peak = out.max()
    if peak <= 0:
        return np.zeros_like(out)
    return np.clip(out / peak, 0.0, 1.0)


def ir_to_multichannel(gray):
    """Replicate a single-channel infrared raster into three identical channels."""
    gray = imaging.as_raster(gray)
    return np.repeat(gray[..., None], 3, axis=2)
