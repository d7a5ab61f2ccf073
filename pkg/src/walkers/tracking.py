"""Contour tracking: a swarm of walkers stepping along the soft contour.

Each tracker repeatedly crops a 7x7x4 patch (image + soft contour) rotated
into its own frame, asks a direction predictor for a relative angle, draws a
step length of 1, 2 or 3 pixels, snaps the angle to the pixels reachable with
that step, and moves. Visits of all trackers are accumulated into the
refined contour map.

Tracker frame: forward is +x of the patch and rows run to the tracker's
right, so a positive (left) relative angle ``a`` points at patch offset
``(cos a, -sin a)``. Turning left by ``a`` changes the absolute heading by
``-a`` because absolute angles increase clockwise on screen.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import imaging
from .errors import InvalidInputError, InvalidParameterError, NoSeedsError, TrackerDeadError
from .nms import averaged_orientation

PATCH_SIZE = 7
PATCH_RADIUS = PATCH_SIZE // 2
LOOP_WINDOW = 8
DEATH_CAUSES = ("stall", "bounds", "loop", "budget")


@dataclass
class SwarmConfig:
    max_steps_per_tracker: int | None = None  # None: 4 * (width + height)
    tau_dead: float = 0.1
    stall_limit: int = 3
    step_length_probs: tuple = (0.7, 0.2, 0.1)
    rng_seed: int = 0
    max_trackers: int = 600

    def __post_init__(self):
        self.step_length_probs = tuple(float(p) for p in self.step_length_probs)
        p1, p2, p3 = self.step_length_probs
        if min(self.step_length_probs) < 0 or abs(p1 + p2 + p3 - 1.0) > 1e-9:
            raise InvalidParameterError("step_length_probs must be non-negative and sum to 1")
        if not (p1 > p2 >= p3):
            raise InvalidParameterError("step_length_probs must satisfy p1 > p2 >= p3")
        if not 0.0 <= self.tau_dead < 1.0:
            raise InvalidParameterError("tau_dead must be in [0, 1)")
        if self.stall_limit < 1 or self.max_trackers < 1:
            raise InvalidParameterError("stall_limit and max_trackers must be >= 1")
        if self.max_steps_per_tracker is not None and self.max_steps_per_tracker < 0:
            raise InvalidParameterError("max_steps_per_tracker must be non-negative")

    def validate(self):
        self.__post_init__()
        return self

    def max_steps(self, shape):
        if self.max_steps_per_tracker is None:
            return 4 * (shape[0] + shape[1])
        return int(self.max_steps_per_tracker)


@dataclass
class TrackerState:
    position: tuple
    heading: float
    steps_taken: int = 0
    alive: bool = True
    path: list = field(default_factory=list)
    stall_count: int = 0
    death: str | None = None

    def __post_init__(self):
        if not self.path:
            self.path = [tuple(self.position)]


@dataclass
class RefinedContour:
    values: np.ndarray
    visits: np.ndarray


@dataclass
class SwarmStats:
    trackers_spawned: int = 0
    deaths: dict = field(default_factory=lambda: {c: 0 for c in DEATH_CAUSES})
    total_steps: int = 0
    v95: float = 0.0

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# --- geometry ---------------------------------------------------------------

def unit_vectors(heading_deg):
    """(cos, sin) of headings, snapped so multiples of 90 degrees are exact."""
    rad = np.radians(np.asarray(heading_deg, dtype=float))
    c, s = np.cos(rad), np.sin(rad)
    c = np.where(np.abs(c) < 1e-12, 0.0, c)
    s = np.where(np.abs(s) < 1e-12, 0.0, s)
    return c, s


_GRID = np.arange(PATCH_SIZE, dtype=float) - PATCH_RADIUS


def extract_patches(stack, centers, headings):
    """Batch of rotated patches.

    ``stack`` is an (H, W, C) array (or a BilinearSampler over one),
    ``centers`` an (N, 2) array of (x, y) and ``headings`` (N,) degrees.
    Returns (N, C, 7, 7); outside pixels read 0.
    """
    if not isinstance(stack, imaging.BilinearSampler):
        stack = imaging.BilinearSampler(stack)
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    c, s = unit_vectors(headings)
    c = np.asarray(c).reshape(-1, 1, 1)
    s = np.asarray(s).reshape(-1, 1, 1)
    u = _GRID[None, None, :]   # along the heading
    v = _GRID[None, :, None]   # to the tracker's right
    xs = centers[:, 0, None, None] + u * c - v * s
    ys = centers[:, 1, None, None] + u * s + v * c
    vals = stack(xs, ys)  # (N, 7, 7, C)
    return np.moveaxis(vals, -1, 1)


def image_stack(image, soft):
    """Concatenate a (H, W, 3) image and its soft map into (H, W, 4)."""
    image = np.asarray(image, dtype=float)
    soft = np.asarray(soft, dtype=float)
    if image.shape[:2] != soft.shape:
        raise InvalidInputError("image and soft contour dimensions differ")
    return np.concatenate([image, soft[..., None]], axis=2)


def extract_patch(image, soft, center, heading):
    """7x7x4 patch around ``center`` rotated so the heading points along +x.

    Channels 0-2 are the image, channel 3 is the soft contour; layout is
    (channel, row, column).
    """
    soft = np.asarray(soft, dtype=float)
    h, w = soft.shape
    x, y = center
    if not (0 <= x < w and 0 <= y < h):
        raise InvalidInputError(f"patch center {center} outside a {w}x{h} raster")
    return extract_patches(image_stack(image, soft), [center], [heading])[0]


def _ring(step):
    """Offsets with Chebyshev norm ``step`` and their left-positive angles."""
    offs = [(dx, dy) for dy in range(-step, step + 1) for dx in range(-step, step + 1)
            if max(abs(dx), abs(dy)) == step]
    offs = np.array(offs, dtype=np.int64)
    ang = np.degrees(np.arctan2(-offs[:, 1], offs[:, 0]))
    ang = np.where(ang <= -180.0, 180.0, ang)
    # preference order for ties: smaller |angle|, then positive (left)
    order = np.lexsort((-ang, np.abs(ang)))
    return offs[order], ang[order]


_RINGS = {s: _ring(s) for s in (1, 2, 3)}


def _nearest(angles, targets):
    """Index of the candidate angle closest to each target (first wins ties)."""
    d = np.abs(imaging.wrap_deg(np.asarray(targets)[..., None] - angles[None, :]))
    return np.argmin(np.round(d, 9), axis=-1)


def quantize_direction(relative, step_len):
    """Snap a relative angle to the pixels at Chebyshev distance ``step_len``.

    Returns ``((dx, dy), snapped_angle)`` in the tracker frame.
    """
    if step_len not in _RINGS:
        raise InvalidParameterError(f"step_len must be 1, 2 or 3, got {step_len}")
    offs, ang = _RINGS[step_len]
    i = int(_nearest(ang, [imaging.wrap_deg(relative)])[0])
    return (int(offs[i, 0]), int(offs[i, 1])), float(ang[i])


def _absolute_moves(headings, relatives, steps):
    """Vectorized step: absolute integer offsets and new headings.

    The snapped relative direction is rotated into the image frame and then
    snapped onto the Chebyshev ring of the same radius, so every move has
    exactly the drawn step length.
    """
    headings = np.asarray(headings, dtype=float)
    relatives = imaging.wrap_deg(np.asarray(relatives, dtype=float))
    offsets = np.zeros((headings.size, 2), dtype=np.int64)
    new_heading = np.zeros(headings.size)
    for s, (offs, ang) in _RINGS.items():
        sel = np.flatnonzero(steps == s)
        if sel.size == 0:
            continue
        snapped = ang[_nearest(ang, relatives[sel])]
        target = imaging.wrap_deg(headings[sel] - snapped)
        # screen-frame candidates: heading angle is atan2(dy, dx), y down
        abs_ang = np.degrees(np.arctan2(offs[:, 1], offs[:, 0]))
        j = _nearest(abs_ang, target)
        offsets[sel] = offs[j]
        new_heading[sel] = imaging.wrap_deg(abs_ang[j])
    return offsets, new_heading


def sample_step_length(config, rng):
    """Categorical draw of 1, 2 or 3 with ``config.step_length_probs``."""
    return _step_from_uniform(config, rng.random())


def _step_from_uniform(config, u):
    cum = np.cumsum(config.step_length_probs)
    return np.searchsorted(cum[:2], u, side="right") + 1


def tracker_rng(rng_seed, index):
    """Independent random stream owned by tracker ``index``."""
    return np.random.default_rng(np.random.SeedSequence(int(rng_seed), spawn_key=(int(index),)))


# --- tracker ----------------------------------------------------------------

def advance_tracker(state, predictor, image, soft, config, rng):
    """One tracking iteration: crop, rotate, predict, draw a step, move.

    Returns a new TrackerState; the input state is left untouched.
    """
    if not state.alive:
        raise TrackerDeadError("cannot advance a dead tracker")
    soft = np.asarray(soft, dtype=float)
    h, w = soft.shape
    new = TrackerState(tuple(state.position), state.heading, state.steps_taken, True,
                       list(state.path), state.stall_count, None)
    max_steps = config.max_steps(soft.shape)
    if new.steps_taken >= max_steps:
        new.alive, new.death = False, "budget"
        return new

    patch = extract_patch(image, soft, new.position, new.heading)
    relative = float(np.asarray(predictor.predict_batch(patch[None]))[0])
    step = sample_step_length(config, rng)
    offset, heading = _absolute_moves([new.heading], [relative], np.array([step]))
    x, y = new.position[0] + int(offset[0, 0]), new.position[1] + int(offset[0, 1])

    if not (0 <= x < w and 0 <= y < h):
        new.alive, new.death = False, "bounds"
        return new
    if (x, y) in new.path[-LOOP_WINDOW:]:
        new.alive, new.death = False, "loop"
        return new
    new.position = (x, y)
    new.heading = float(heading[0])
    new.path.append((x, y))
    new.steps_taken += 1
    new.stall_count = new.stall_count + 1 if soft[y, x] < config.tau_dead else 0
    if new.stall_count >= config.stall_limit:
        new.alive, new.death = False, "stall"
    elif new.steps_taken >= max_steps:
        new.alive, new.death = False, "budget"
    return new


def initial_headings(soft, seeds):
    """Two opposite headings per seed along the local contour tangent."""
    orient = averaged_orientation(soft)
    out = []
    for (x, y), _ in seeds:
        tangent = imaging.wrap_deg(orient[y, x] + 90.0)
        out.append((tangent, imaging.wrap_deg(tangent + 180.0)))
    return out


def _run_group(stack, soft, starts, headings, indices, config, predictor, max_steps):
    """Advance a group of trackers in lock-step until all are dead.

    Returns (visit counts, death counts, total steps). Each tracker draws its
    step lengths from its own stream, so grouping does not change results.
    """
    h, w = soft.shape
    n = len(indices)
    visits = np.zeros(h * w, dtype=np.int64)
    deaths = {c: 0 for c in DEATH_CAUSES}
    pos = np.array(starts, dtype=np.int64).reshape(n, 2)
    heading = np.array(headings, dtype=float)
    steps = np.zeros(n, dtype=np.int64)
    stall = np.zeros(n, dtype=np.int64)
    recent = np.full((n, LOOP_WINDOW, 2), -1, dtype=np.int64)
    recent[:, -1] = pos
    cum = np.cumsum(config.step_length_probs)[:2]
    uniforms = np.array([tracker_rng(config.rng_seed, i).random(max_steps) for i in indices])
    uniforms = uniforms.reshape(n, max_steps)

    start_ok = soft[pos[:, 1], pos[:, 0]] >= config.tau_dead
    np.add.at(visits, (pos[:, 1] * w + pos[:, 0])[start_ok], 1)

    sampler = imaging.BilinearSampler(stack)
    alive = np.ones(n, dtype=bool)
    if max_steps == 0:
        deaths["budget"] += n
        return visits, deaths, 0
    total = 0
    while alive.any():
        idx = np.flatnonzero(alive)
        patches = extract_patches(sampler, pos[idx], heading[idx])
        rel = np.asarray(predictor.predict_batch(patches), dtype=float)
        step_len = np.searchsorted(cum, uniforms[idx, steps[idx]], side="right") + 1
        offs, new_head = _absolute_moves(heading[idx], rel, step_len)
        nxt = pos[idx] + offs

        inside = (nxt[:, 0] >= 0) & (nxt[:, 0] < w) & (nxt[:, 1] >= 0) & (nxt[:, 1] < h)
        looped = inside & (recent[idx] == nxt[:, None, :]).all(axis=2).any(axis=1)
        moved = inside & ~looped
        deaths["bounds"] += int((~inside).sum())
        deaths["loop"] += int(looped.sum())
        alive[idx[~moved]] = False

        mv = idx[moved]
        npos = nxt[moved]
        pos[mv] = npos
        heading[mv] = new_head[moved]
        steps[mv] += 1
        total += mv.size
        recent[mv] = np.roll(recent[mv], -1, axis=1)
        recent[mv, -1] = npos
        val = soft[npos[:, 1], npos[:, 0]]
        strong = val >= config.tau_dead
        np.add.at(visits, (npos[:, 1] * w + npos[:, 0])[strong], 1)
        stall[mv] = np.where(strong, 0, stall[mv] + 1)

        stalled = stall[mv] >= config.stall_limit
        spent = ~stalled & (steps[mv] >= max_steps)
        deaths["stall"] += int(stalled.sum())
        deaths["budget"] += int(spent.sum())
        alive[mv[stalled | spent]] = False
    return visits, deaths, total


def refined_from_visits(visits, soft):
    """Log-scaled visit density, normalized at the 95th percentile, times max(soft, 0.5)."""
    visits = np.asarray(visits)
    nz = visits[visits > 0]
    if nz.size == 0:
        return np.zeros(visits.shape), 0.0
    v95 = float(np.percentile(nz, 95))
    density = np.minimum(1.0, np.log1p(visits) / math.log1p(v95))
    return np.clip(density * np.maximum(soft, 0.5), 0.0, 1.0), v95


def run_swarm(image, soft, seeds, config, predictor, workers=1):
    """Spawn two opposite trackers per seed, walk them all, build the refined map.

    Results are identical for any ``workers`` value: each tracker owns its
    random stream and visit counts are summed as integers.
    """
    soft = imaging.as_raster(soft, "soft")
    if not seeds:
        raise NoSeedsError("no seeds to start trackers from")
    stack = image_stack(image, soft)
    max_steps = config.max_steps(soft.shape)

    starts, headings = [], []
    for ((x, y), _), pair in zip(seeds, initial_headings(soft, seeds)):
        for hd in pair:
            starts.append((x, y))
            headings.append(hd)
    starts = starts[:config.max_trackers]
    headings = headings[:config.max_trackers]
    n = len(starts)

    workers = max(1, int(workers))
    bounds = np.linspace(0, n, min(workers, n) + 1).astype(int)
    groups = [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]

    def job(ab):
        a, b = ab
        return _run_group(stack, soft, starts[a:b], headings[a:b], range(a, b),
                          config, predictor, max_steps)

    if len(groups) == 1:
        results = [job(groups[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(groups)) as pool:
            results = list(pool.map(job, groups))

    visits = np.zeros(soft.size, dtype=np.int64)
    stats = SwarmStats(trackers_spawned=n)
    for v, d, t in results:
        visits += v
        stats.total_steps += t
        for k in DEATH_CAUSES:
            stats.deaths[k] += d[k]
    visits = visits.reshape(soft.shape)
    values, stats.v95 = refined_from_visits(visits, soft)
    return RefinedContour(values, visits), stats
