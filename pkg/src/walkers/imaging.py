"""Raster primitives: filters, interpolation, morphology and region analysis.

Conventions used throughout the package:

* a raster is a 2-D float array indexed ``[y, x]`` with values in [0, 1];
* a multi-channel image is a float array of shape ``(H, W, 3)``;
* a binary mask is a 2-D bool array;
* pixel coordinates are ``(x, y)`` tuples, x to the right and y down;
* angles are degrees in (-180, 180]; the direction of angle ``a`` is
  ``(cos a, sin a)`` in (x, y-down) axes.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import (
    InvalidInputError,
    InvalidParameterError,
    MalformedImageError,
    MissingFileError,
    OutOfBoundsError,
    UnsupportedFormatError,
)

SOBEL_X = np.array([[-1.0, 0.0, 1.0],
                    [-2.0, 0.0, 2.0],
                    [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()
# largest Sobel magnitude reachable on a [0, 1] raster: gx = 4, gy = 2
SOBEL_MAX = math.sqrt(20.0)

FOUR = ndimage.generate_binary_structure(2, 1)
EIGHT = ndimage.generate_binary_structure(2, 2)


def wrap_deg(angle):
    """Normalize degrees into (-180, 180]. Works on scalars and arrays."""
    a = np.mod(np.asarray(angle, dtype=float) + 180.0, 360.0) - 180.0
    a = np.where(a <= -180.0, a + 360.0, a)
    if a.ndim == 0:
        return float(a)
    return a


def as_raster(data, name="raster"):
    """Validate and return ``data`` as a float64 raster in [0, 1]."""
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0 or not np.isfinite(arr).all()):
        raise InvalidInputError(f"{name} values must lie in [0, 1]")
    return arr


def as_image(data, name="image"):
    """Validate a (H, W, 3) multi-channel image."""
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidInputError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise InvalidInputError(f"{name} values must lie in [0, 1]")
    return arr


def gaussian_kernel(sigma):
    """1-D normalized Gaussian truncated at radius ceil(3 sigma)."""
    if not sigma > 0:
        raise InvalidParameterError(f"sigma must be positive, got {sigma}")
    radius = int(math.ceil(3.0 * sigma))
    t = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(src, sigma):
    """Separable Gaussian blur with edge replication at the borders."""
    k = gaussian_kernel(sigma)
    arr = np.asarray(src, dtype=float)
    out = ndimage.correlate1d(arr, k, axis=0, mode="nearest")
    return ndimage.correlate1d(out, k, axis=1, mode="nearest")


def sobel_gradient(src):
    """3x3 Sobel gradient.

    Returns ``(gx, gy, magnitude, orientation)``. ``gx``/``gy`` are the raw
    signed responses, ``magnitude`` is scaled by the largest magnitude
    attainable on a [0, 1] raster so it stays in [0, 1], and
    ``orientation`` is ``atan2(gy, gx)`` in degrees.
    """
    arr = np.asarray(src, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 3 or arr.shape[1] < 3:
        raise InvalidInputError(f"sobel needs a 2-D raster of at least 3x3, got {arr.shape}")
    # separable form: smoothing first makes flat regions difference to exactly 0
    smooth, diff = [1.0, 2.0, 1.0], [-1.0, 0.0, 1.0]
    gx = ndimage.correlate1d(ndimage.correlate1d(arr, smooth, axis=0, mode="nearest"),
                             diff, axis=1, mode="nearest")
    gy = ndimage.correlate1d(ndimage.correlate1d(arr, smooth, axis=1, mode="nearest"),
                             diff, axis=0, mode="nearest")
    mag = np.hypot(gx, gy) / SOBEL_MAX
    orient = np.degrees(np.arctan2(gy, gx))
    orient = np.where(orient <= -180.0, 180.0, orient)
    return gx, gy, mag, orient


class BilinearSampler:
    """Repeated bilinear sampling of one array; support outside reads 0.

    ``arr`` is (H, W) or (H, W, C). The zero-padded copy is built once, so
    this is the fast path when the same raster is sampled many times.
    """

    def __init__(self, arr):
        arr = np.asarray(arr)
        self.shape = arr.shape
        self.h, self.w = arr.shape[:2]
        pad = [(1, 1), (1, 1)] + [(0, 0)] * (arr.ndim - 2)
        padded = np.pad(arr, pad)
        self._flat = padded.reshape((self.h + 2) * (self.w + 2), *arr.shape[2:])

    def __call__(self, xs, ys):
        h, w = self.h, self.w
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        x0 = np.floor(xs)
        y0 = np.floor(ys)
        fx = xs - x0
        fy = ys - y0
        x0 = x0.astype(np.intp)
        y0 = y0.astype(np.intp)
        # clip into the one-pixel zero border; anything clipped lies fully outside
        far = (x0 < -1) | (x0 > w - 1) | (y0 < -1) | (y0 > h - 1)
        xi = np.clip(x0 + 1, 0, w + 1)
        xj = np.clip(x0 + 2, 0, w + 1)
        row_i = np.clip(y0 + 1, 0, h + 1) * (w + 2)
        row_j = np.clip(y0 + 2, 0, h + 1) * (w + 2)
        if len(self.shape) == 3:
            fx = fx[..., None]
            fy = fy[..., None]
            far = far[..., None]
        flat = self._flat
        a, b = flat[row_i + xi], flat[row_i + xj]
        c, d = flat[row_j + xi], flat[row_j + xj]
        top = a + fx * (b - a)
        val = top + fy * (c + fx * (d - c) - top)
        if far.any():
            val = np.where(far, 0.0, val)
        return val


def sample_bilinear(arr, xs, ys):
    """Vectorized bilinear sampling; support pixels outside the array read 0.

    ``arr`` is (H, W) or (H, W, C); ``xs`` and ``ys`` broadcast together.
    The result has shape ``xs.shape`` (+ ``(C,)`` for channel arrays).
    """
    return BilinearSampler(arr)(xs, ys)


def bilinear_sample(src, x, y):
    """Bilinear intensity at subpixel ``(x, y)``.

    Valid for -0.5 <= x <= width - 0.5 (likewise y); support pixels beyond
    the raster read as 0.
    """
    arr = np.asarray(src, dtype=float)
    h, w = arr.shape
    if not (-0.5 <= x <= w - 0.5 and -0.5 <= y <= h - 0.5):
        raise OutOfBoundsError(f"({x}, {y}) outside the padded bounds of a {w}x{h} raster")
    return float(sample_bilinear(arr, x, y))


def connected_components(mask, connectivity=8):
    """Label connected regions of a binary mask.

    Labels run 1..K in raster-scan order of each region's first pixel.
    Returns ``(labels, areas)`` where ``areas[k - 1]`` is the size of label k.
    """
    if connectivity not in (4, 8):
        raise InvalidParameterError(f"connectivity must be 4 or 8, got {connectivity}")
    structure = FOUR if connectivity == 4 else EIGHT
    labels, count = ndimage.label(np.asarray(mask, dtype=bool), structure=structure)
    areas = np.bincount(labels.ravel(), minlength=count + 1)[1:]
    return labels, areas


def flood_fill_from_border(blocked):
    """Pixels 4-connected to the image border without crossing ``blocked``."""
    blocked = np.asarray(blocked, dtype=bool)
    free = ~blocked
    labels, count = ndimage.label(free, structure=FOUR)
    if count == 0:
        return np.zeros_like(blocked)
    border = np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]])
    touching = np.unique(border[border > 0])
    return np.isin(labels, touching)


def enclosed_region(blocked):
    """Pixels neither blocked nor reachable from the border."""
    blocked = np.asarray(blocked, dtype=bool)
    return ~(flood_fill_from_border(blocked) | blocked)


# --- Zhang-Suen thinning -------------------------------------------------

# neighbour offsets (dy, dx) in the order P2..P9: N, NE, E, SE, S, SW, W, NW
_NEIGHBOURS = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


def _deletable(img, ys, xs, first):
    """Zhang-Suen deletion test for the foreground pixels at (ys, xs).

    ``img`` is zero-padded by one pixel; coordinates refer to the padded array.
    """
    p = [img[ys + dy, xs + dx] for dy, dx in _NEIGHBOURS]
    b = sum(p)
    a = sum((p[i] == 0) & (p[(i + 1) % 8] == 1) for i in range(8))
    p2, _, p4, _, p6, _, p8, _ = p
    if first:
        c1 = (p2 * p4 * p6) == 0
        c2 = (p4 * p6 * p8) == 0
    else:
        c1 = (p2 * p4 * p8) == 0
        c2 = (p2 * p6 * p8) == 0
    return (b >= 2) & (b <= 6) & (a == 1) & c1 & c2


def _topology(img):
    """(8-component labels, component count, background 4-component count)."""
    fg, n_fg = ndimage.label(img, structure=EIGHT)
    _, n_bg = ndimage.label(img == 0, structure=FOUR)
    return fg, n_fg, n_bg


def _interleaved_pass(img, first):
    """One sub-iteration as nine non-interacting passes over (y mod 3, x mod 3).

    Pixels in one pass are at least three apart, so every deletion is tested
    against the current image and each removed pixel is a simple point.
    """
    changed = False
    for ry in range(3):
        for rx in range(3):
            sub = img[1 + ry:-1:3, 1 + rx:-1:3]
            cy, cx = np.nonzero(sub)
            if cy.size == 0:
                continue
            cy = cy * 3 + ry + 1
            cx = cx * 3 + rx + 1
            kill = _deletable(img, cy, cx, first)
            if kill.any():
                img[cy[kill], cx[kill]] = 0
                changed = True
    return changed


def thin(mask):
    """Zhang-Suen thinning to a 1-pixel-wide skeleton.

    Sub-iterations run in the classic parallel form. Parallel deletion erases
    2-pixel-thick structures such as 2x2 blocks, so a sub-iteration that would
    alter the topology (component or hole count) is redone as interleaved
    passes that only ever delete simple points.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return mask.copy()
    ys, xs = np.nonzero(mask)
    y0, y1 = ys.min(), ys.max() + 1
    x0, x1 = xs.min(), xs.max() + 1
    img = np.zeros((y1 - y0 + 2, x1 - x0 + 2), dtype=np.uint8)
    img[1:-1, 1:-1] = mask[y0:y1, x0:x1]

    changed = True
    while changed:
        changed = False
        for first in (True, False):
            cy, cx = np.nonzero(img)
            kill = _deletable(img, cy, cx, first)
            if not kill.any():
                continue
            before, n_fg, n_bg = _topology(img)
            trial = img.copy()
            trial[cy[kill], cx[kill]] = 0
            after, m_fg, m_bg = _topology(trial)
            survivors = np.unique(before[after > 0])
            if m_fg == n_fg and m_bg == n_bg and survivors.size == n_fg:
                img = trial
                changed = True
            else:
                changed |= _interleaved_pass(img, first)

    out = np.zeros_like(mask)
    out[y0:y1, x0:x1] = img[1:-1, 1:-1].astype(bool)
    return out


# --- PNG I/O ---------------------------------------------------------------

def load_png(path):
    """Load an 8-bit PNG: grayscale -> (H, W) raster, color -> (H, W, 3)."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"no such file: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L", "I", "F", "RGB;16", "RGBA;16"):
                raise UnsupportedFormatError(f"{path}: unsupported bit depth (mode {mode})")
            if mode == "1":
                im = im.convert("L")
            elif mode in ("P", "RGBA", "LA", "CMYK", "YCbCr"):
                im = im.convert("L" if mode == "LA" else "RGB")
            elif mode not in ("L", "RGB"):
                raise UnsupportedFormatError(f"{path}: unsupported image mode {mode}")
            data = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, SyntaxError, EOFError) as exc:
        raise MalformedImageError(f"{path}: not a readable PNG ({exc})") from exc
    except OSError as exc:
        if isinstance(exc, UnsupportedFormatError):
            raise
        raise MalformedImageError(f"{path}: not a readable PNG ({exc})") from exc
    return data.astype(float) / 255.0


def to_bytes(data):
    """Quantize a [0, 1] raster/image (or bool mask) to uint8."""
    arr = np.asarray(data)
    if arr.dtype == bool:
        return arr.astype(np.uint8) * 255
    arr = arr.astype(float)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise InvalidInputError("image values must lie in [0, 1] to be saved")
    return np.round(arr * 255.0).astype(np.uint8)


def save_png(image, path):
    """Save a raster, bool mask or (H, W, 3) image as an 8-bit PNG."""
    arr = np.asarray(image)
    if not (arr.ndim == 2 or (arr.ndim == 3 and arr.shape[2] == 3)):
        raise InvalidInputError(f"cannot save array of shape {arr.shape} as PNG")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_bytes(arr)).save(path, format="PNG")
    return path


def quantize8(data):
    """Round a [0, 1] array to the 1/255 grid that PNG storage preserves."""
    return to_bytes(data).astype(float) / 255.0


# --- boundaries and chains --------------------------------------------------

# Moore neighbourhood, clockwise on screen (y down), as (dx, dy)
MOORE = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))
_MOORE_INDEX = {d: i for i, d in enumerate(MOORE)}


def inner_boundary(mask):
    """Mask pixels with at least one 4-neighbour outside the mask."""
    mask = np.asarray(mask, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask, structure=FOUR, border_value=0)


def trace_chain(mask):
    """Moore-neighbour trace of the outer boundary of the first region.

    Returns the boundary as an ordered list of ``(x, y)`` pixels, clockwise on
    screen, starting at the first mask pixel in raster order. Pixels on
    1-pixel-wide necks appear more than once.
    """
    mask = np.asarray(mask, dtype=bool)
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return []
    h, w = mask.shape
    start = (int(xs[0]), int(ys[0]))

    def inside(p):
        return 0 <= p[0] < w and 0 <= p[1] < h and mask[p[1], p[0]]

    chain = [start]
    cur = start
    back = 4  # west of the first raster pixel is background
    first_move = None
    limit = 4 * mask.size + 8
    for _ in range(limit):
        for k in range(1, 9):
            d = (back + k) % 8
            nxt = (cur[0] + MOORE[d][0], cur[1] + MOORE[d][1])
            if inside(nxt):
                break
        else:
            return chain  # isolated pixel
        prev = (cur[0] + MOORE[(d - 1) % 8][0], cur[1] + MOORE[(d - 1) % 8][1])
        if first_move is None:
            first_move = (cur, nxt)
        elif (cur, nxt) == first_move:
            chain.pop()
            return chain
        back = _MOORE_INDEX[(prev[0] - nxt[0], prev[1] - nxt[1])]
        cur = nxt
        chain.append(cur)
    raise InvalidInputError("boundary trace did not terminate")


def is_simple_closed_chain(chain, contour):
    """True when ``chain`` visits every contour pixel once and closes on itself."""
    if len(chain) < 4 or len(set(chain)) != len(chain):
        return False
    if len(chain) != int(np.count_nonzero(contour)):
        return False
    if not all(contour[y, x] for x, y in chain):
        return False
    for (ax, ay), (bx, by) in zip(chain, chain[1:] + chain[:1]):
        if max(abs(ax - bx), abs(ay - by)) != 1:
            return False
    return True
