"""Slow, straight-line reference implementations used as test oracles."""
from collections import deque
import math

import numpy as np


def dense_correlate(arr, kernel):
    """Direct 2-D correlation with edge replication, pure loops."""
    h, w = arr.shape
    kh, kw = kernel.shape
    ry, rx = kh // 2, kw // 2
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for j in range(kh):
                for i in range(kw):
                    yy = min(max(y + j - ry, 0), h - 1)
                    xx = min(max(x + i - rx, 0), w - 1)
                    acc += kernel[j, i] * arr[yy, xx]
            out[y, x] = acc
    return out


def gaussian_2d(sigma):
    r = int(math.ceil(3 * sigma))
    t = np.arange(-r, r + 1)
    g = np.exp(-0.5 * (t / sigma) ** 2)
    g /= g.sum()
    return np.outer(g, g)


def bilinear_4term(arr, x, y):
    h, w = arr.shape

    def px(i, j):
        return arr[j, i] if 0 <= i < w and 0 <= j < h else 0.0

    i, j = math.floor(x), math.floor(y)
    a, b = x - i, y - j
    return ((1 - a) * (1 - b) * px(i, j) + a * (1 - b) * px(i + 1, j)
            + (1 - a) * b * px(i, j + 1) + a * b * px(i + 1, j + 1))


def union_find_components(mask, connectivity):
    h, w = mask.shape
    parent = {}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for y in range(h):
        for x in range(w):
            if mask[y, x]:
                parent[(y, x)] = (y, x)
    if connectivity == 4:
        offs = [(0, 1), (1, 0)]
    else:
        offs = [(0, 1), (1, 0), (1, 1), (1, -1)]
    for (y, x) in list(parent):
        for dy, dx in offs:
            q = (y + dy, x + dx)
            if q in parent:
                ra, rb = find((y, x)), find(q)
                if ra != rb:
                    parent[ra] = rb
    groups = {}
    for p in parent:
        groups.setdefault(find(p), []).append(p)
    return sorted(len(g) for g in groups.values())


def bfs_outside(blocked):
    h, w = blocked.shape
    seen = np.zeros_like(blocked, dtype=bool)
    q = deque()
    for y in range(h):
        for x in range(w):
            if (y in (0, h - 1) or x in (0, w - 1)) and not blocked[y, x]:
                seen[y, x] = True
                q.append((y, x))
    while q:
        y, x = q.popleft()
        for dy, dx in ((0, 1), (1, 0), (0, -1), (-1, 0)):
            yy, xx = y + dy, x + dx
            if 0 <= yy < h and 0 <= xx < w and not blocked[yy, xx] and not seen[yy, xx]:
                seen[yy, xx] = True
                q.append((yy, xx))
    return seen


def zhang_suen_reference(mask):
    """Textbook parallel Zhang-Suen, pixel loops."""
    img = np.pad(mask.astype(np.uint8), 1)

    def nb(y, x):
        return [img[y - 1, x], img[y - 1, x + 1], img[y, x + 1], img[y + 1, x + 1],
                img[y + 1, x], img[y + 1, x - 1], img[y, x - 1], img[y - 1, x - 1]]

    changed = True
    while changed:
        changed = False
        for step in (0, 1):
            kill = []
            for y in range(1, img.shape[0] - 1):
                for x in range(1, img.shape[1] - 1):
                    if not img[y, x]:
                        continue
                    p = nb(y, x)
                    b = sum(p)
                    a = sum(p[i] == 0 and p[(i + 1) % 8] == 1 for i in range(8))
                    p2, _, p4, _, p6, _, p8, _ = p
                    if step == 0:
                        c = p2 * p4 * p6 == 0 and p4 * p6 * p8 == 0
                    else:
                        c = p2 * p4 * p8 == 0 and p2 * p6 * p8 == 0
                    if 2 <= b <= 6 and a == 1 and c:
                        kill.append((y, x))
            for y, x in kill:
                img[y, x] = 0
            changed |= bool(kill)
    return img[1:-1, 1:-1].astype(bool)


def disk_ring(shape, center, r_in, r_out):
    yy, xx = np.mgrid[:shape[0], :shape[1]]
    r = np.hypot(xx - center[0], yy - center[1])
    return (r >= r_in) & (r < r_out)


def brute_metrics(pred, gt):
    """Per-pixel counting with the documented empty-mask conventions."""
    tp = fp = fn = 0
    for p, g in zip(np.asarray(pred, bool).ravel().tolist(), np.asarray(gt, bool).ravel().tolist()):
        tp += p and g
        fp += p and not g
        fn += g and not p
    if tp + fp == 0 and tp + fn == 0:
        return 1.0, 1.0, 1.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return precision, recall, tp / (tp + fp + fn)


def nearest_direction(angle, step):
    """Brute-force argmin over every offset at Chebyshev distance ``step``."""
    best = None
    for dy in range(-step, step + 1):
        for dx in range(-step, step + 1):
            if max(abs(dx), abs(dy)) != step:
                continue
            a = math.degrees(math.atan2(-dy, dx))
            if a <= -180.0:
                a += 360.0
            d = abs((angle - a + 180.0) % 360.0 - 180.0)
            key = (round(d, 9), abs(a), -a)
            if best is None or key < best[0]:
                best = (key, (dx, dy), a)
    return best[1], best[2]


def planted_ring_map(rng, size=32):
    """Random refined map: noisy ring band, optional weak arc, faint clutter."""
    yy, xx = np.mgrid[:size, :size]
    cy, cx = rng.uniform(13, size - 14, 2)
    r = rng.uniform(6, 9)
    d = np.hypot(yy - cy, xx - cx)
    band = np.abs(d - r) <= rng.uniform(0.8, 1.6)
    out = np.where(rng.random((size, size)) < 0.15, rng.uniform(0, 0.15, (size, size)), 0.0)
    out[band] = rng.uniform(0.4, 1.0, band.sum())
    if rng.random() < 0.5:
        ang = np.arctan2(yy - cy, xx - cx)
        centre = rng.uniform(-np.pi, np.pi)
        arc = band & (np.abs(np.angle(np.exp(1j * (ang - centre)))) < rng.uniform(0.2, 0.6))
        out[arc] = rng.uniform(0.2, 0.45, arc.sum())
    return np.round(out * 255) / 255


def linear_closure_search(refined, line, closes_thinned):
    """Highest level whose raw and thinned binarizations both close."""
    from walkers import binarize
    for t in binarize.threshold_levels(refined):
        if binarize.is_closed(refined >= t, line) and closes_thinned(t):
            return float(t)
    return None


def dense_forward(tensors, patch):
    """Network forward pass with explicit loops, float64."""
    w1, b1, w2, b2, w3, b3, w4, b4 = [np.asarray(t, dtype=float) for t in tensors]
    x = np.asarray(patch, dtype=float)

    def conv(inp, w, b):
        f, c = w.shape[:2]
        size = inp.shape[1] - 2
        out = np.zeros((f, size, size))
        for o in range(f):
            for i in range(size):
                for j in range(size):
                    out[o, i, j] = b[o] + sum(w[o, ch, k, m] * inp[ch, i + k, j + m]
                                              for ch in range(c) for k in range(3) for m in range(3))
        return np.maximum(out, 0)

    a2 = conv(conv(x, w1, b1), w2, b2).reshape(-1)
    a3 = np.maximum(a2 @ w3 + b3, 0)
    return 180.0 * math.tanh(float(a3 @ w4[:, 0] + b4[0]))
