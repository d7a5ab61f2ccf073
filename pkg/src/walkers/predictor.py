"""Direction predictors for 7x7x4 patches.

A predictor maps a patch (channel, row, column; channel 3 = soft contour) to
a relative angle in degrees, 0 meaning straight ahead and positive meaning a
left turn. Two implementations share the ``predict`` / ``predict_batch``
interface: an analytic ridge follower and a small convolutional network
trained with plain numpy backpropagation.
"""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import imaging
from .errors import (
    BadMagicError,
    InvalidInputError,
    InvalidParameterError,
    InvalidWeightsError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from .tracking import PATCH_RADIUS, extract_patches, image_stack

log = logging.getLogger(__name__)

SOFT_CHANNEL = 3


def _as_batch(patches):
    arr = np.asarray(patches, dtype=float)
    if arr.shape[-3:] != (4, 7, 7):
        raise InvalidInputError(f"patches must end in shape (4, 7, 7), got {arr.shape}")
    return arr.reshape(-1, 4, 7, 7)


# --- analytic reference -------------------------------------------------------

class AnalyticPredictor:
    """Follows the brightest soft-contour direction around the patch centre.

    The soft channel is sampled at radius 2.5 every 15 degrees. Candidates
    inside the backward cone (|angle| > 180 - back_cone) are used only when
    every forward sample is below ``tau_dead``. The answer is the
    intensity-weighted circular mean of the three strongest candidates.

    With the default cone of 90 degrees only the forward half-plane competes.
    A narrow cone (e.g. 30) lets the trail the tracker just left win the
    top-3 whenever the heading is ~30 degrees off the ridge, which the
    45-degree move grid produces routinely; the tracker then turns around.
    """

    def __init__(self, tau_dead=0.1, radius=2.5, top_k=3, back_cone=90.0):
        if not 0.0 <= back_cone < 180.0:
            raise InvalidParameterError("back_cone must be in [0, 180)")
        self.back_cone = back_cone
        self.tau_dead = tau_dead
        self.radius = radius
        self.top_k = top_k
        ang = np.arange(-165.0, 181.0, 15.0)
        # tie order: smaller |angle| first, then left (positive) before right
        order = np.lexsort((-ang, np.abs(ang)))
        self.angles = ang[order]
        self.forward = np.abs(self.angles) <= 180.0 - back_cone
        rad = np.radians(self.angles)
        # bilinear weights of every sample point over the 49 patch pixels
        eye = np.eye(49).reshape(49, 7, 7)
        self._weights = np.stack([
            imaging.sample_bilinear(e, PATCH_RADIUS + radius * np.cos(rad),
                                    PATCH_RADIUS - radius * np.sin(rad))
            for e in eye])

    def sample(self, patches):
        """Soft-channel intensities at every candidate angle, shape (N, 24)."""
        soft = _as_batch(patches)[:, SOFT_CHANNEL]
        return soft.reshape(-1, 49) @ self._weights

    def predict_with_flag(self, patches):
        """Angles (N,) and a ``blind`` flag (N,) for patches with no signal."""
        vals = np.round(self.sample(patches), 9)
        n = vals.shape[0]
        fwd_dead = (vals[:, self.forward] < self.tau_dead).all(axis=1)
        usable = np.where(fwd_dead[:, None], True, self.forward[None, :])
        scored = np.where(usable, vals, -1.0)
        # stable sort keeps the tie preference encoded in self.angles
        top = np.argsort(-scored, axis=1, kind="stable")[:, :self.top_k]
        w = np.take_along_axis(scored, top, axis=1).clip(min=0.0)
        rad = np.radians(self.angles[top])
        sx = (w * np.cos(rad)).sum(axis=1)
        sy = (w * np.sin(rad)).sum(axis=1)
        blind = ~(vals > 0).any(axis=1)
        ang = np.degrees(np.arctan2(sy, sx))
        ang = np.where(blind | (w.sum(axis=1) == 0), 0.0, ang)
        return imaging.wrap_deg(ang).reshape(n), blind

    def predict_batch(self, patches):
        return self.predict_with_flag(patches)[0]

    def predict(self, patch):
        return float(self.predict_batch(patch)[0])


# --- network -------------------------------------------------------------------

LAYER_SHAPES = (
    (16, 4, 3, 3), (16,),     # conv 3x3, 4 -> 16
    (32, 16, 3, 3), (32,),    # conv 3x3, 16 -> 32
    (288, 64), (64,),         # dense 32*3*3 -> 64
    (64, 1), (1,),            # dense 64 -> 1
)
FAN_IN = (36, 144, 288, 64)
OUTPUT_INIT_SCALE = 0.1


@dataclass(frozen=True)
class NetworkWeights:
    """Eight float32 tensors in LAYER_SHAPES order."""
    tensors: tuple

    def __post_init__(self):
        ts = tuple(np.array(t, dtype=np.float32) for t in self.tensors)
        if len(ts) != len(LAYER_SHAPES):
            raise InvalidWeightsError(f"expected {len(LAYER_SHAPES)} tensors, got {len(ts)}")
        for t, shape in zip(ts, LAYER_SHAPES):
            if t.shape != shape:
                raise InvalidWeightsError(f"tensor shape {t.shape} != expected {shape}")
            if not np.isfinite(t).all():
                raise InvalidWeightsError("weights contain non-finite values")
            t.setflags(write=False)
        object.__setattr__(self, "tensors", ts)

    @classmethod
    def zeros(cls):
        return cls(tuple(np.zeros(s, np.float32) for s in LAYER_SHAPES))

    @classmethod
    def he_uniform(cls, rng):
        ts = []
        for k, shape in enumerate(LAYER_SHAPES):
            if k % 2:
                ts.append(np.zeros(shape, np.float32))
            else:
                limit = math.sqrt(6.0 / FAN_IN[k // 2])
                if k == len(LAYER_SHAPES) - 2:
                    # small output layer: start near 0 degrees, away from tanh saturation
                    limit *= OUTPUT_INIT_SCALE
                ts.append(rng.uniform(-limit, limit, shape).astype(np.float32))
        return cls(tuple(ts))


def _conv(x, w, b):
    """Valid 3x3 convolution (cross-correlation): (N,C,H,W) -> (N,F,H-2,W-2)."""
    cols = sliding_window_view(x, (3, 3), axis=(2, 3))  # N, C, H', W', 3, 3
    n, c, hh, ww = cols.shape[:4]
    flat = cols.transpose(0, 2, 3, 1, 4, 5).reshape(n * hh * ww, c * 9)
    out = flat @ w.reshape(w.shape[0], -1).T + b
    return out.reshape(n, hh, ww, -1).transpose(0, 3, 1, 2), flat


def _forward(tensors, x):
    w1, b1, w2, b2, w3, b3, w4, b4 = tensors
    z1, cols1 = _conv(x, w1, b1)
    a1 = np.maximum(z1, 0)
    z2, cols2 = _conv(a1, w2, b2)
    a2 = np.maximum(z2, 0).reshape(x.shape[0], -1)
    z3 = a2 @ w3 + b3
    a3 = np.maximum(z3, 0)
    z4 = (a3 @ w4 + b4)[:, 0]
    out = 180.0 * np.tanh(z4)
    return out, (x, z1, cols1, a1, z2, cols2, a2, z3, a3, z4)


def _backward(tensors, cache, dout):
    """Gradients of sum(dout * out) with respect to every tensor."""
    w1, b1, w2, b2, w3, b3, w4, b4 = tensors
    x, z1, cols1, a1, z2, cols2, a2, z3, a3, z4 = cache
    n = x.shape[0]
    dz4 = dout * 180.0 * (1.0 - np.tanh(z4) ** 2)
    gw4 = a3.T @ dz4[:, None]
    gb4 = np.array([dz4.sum()])
    dz3 = (dz4[:, None] @ w4.T) * (z3 > 0)
    gw3 = a2.T @ dz3
    gb3 = dz3.sum(axis=0)
    dz2 = (dz3 @ w3.T).reshape(z2.shape) * (z2 > 0)
    d2 = dz2.transpose(0, 2, 3, 1).reshape(-1, w2.shape[0])
    gw2 = (d2.T @ cols2).reshape(w2.shape)
    gb2 = d2.sum(axis=0)
    dcols = (d2 @ w2.reshape(w2.shape[0], -1)).reshape(n, 3, 3, w2.shape[1], 3, 3)
    da1 = np.zeros_like(a1)
    for k in range(3):
        for l in range(3):
            da1[:, :, k:k + 3, l:l + 3] += dcols[:, :, :, :, k, l].transpose(0, 3, 1, 2)
    dz1 = da1 * (z1 > 0)
    d1 = dz1.transpose(0, 2, 3, 1).reshape(-1, w1.shape[0])
    gw1 = (d1.T @ cols1).reshape(w1.shape)
    gb1 = d1.sum(axis=0)
    return [gw1, gb1, gw2, gb2, gw3, gb3, gw4, gb4]


def net_forward_batch(weights, patches, dtype=np.float32):
    x = _as_batch(patches).astype(dtype)
    tensors = [t.astype(dtype) for t in weights.tensors]
    out, _ = _forward(tensors, x)
    return imaging.wrap_deg(out.astype(float))


def net_forward(weights, patch):
    """Relative angle predicted by the network, in (-180, 180)."""
    if not isinstance(weights, NetworkWeights):
        raise InvalidWeightsError("weights must be a NetworkWeights instance")
    return float(net_forward_batch(weights, patch)[0])


class NetworkPredictor:
    def __init__(self, weights):
        self.weights = weights
        self._tensors = [t for t in weights.tensors]

    def predict_batch(self, patches):
        out, _ = _forward(self._tensors, _as_batch(patches).astype(np.float32))
        return imaging.wrap_deg(out.astype(float))

    def predict(self, patch):
        return float(self.predict_batch(patch)[0])


def wrapped_error(pred, target):
    return imaging.wrap_deg(np.asarray(pred, dtype=float) - np.asarray(target, dtype=float))


def loss_and_grads(weights_or_tensors, patches, targets, dtype=np.float32):
    """Mean wrapped squared angular loss and its gradients."""
    tensors = getattr(weights_or_tensors, "tensors", weights_or_tensors)
    tensors = [np.asarray(t, dtype=dtype) for t in tensors]
    x = _as_batch(patches).astype(dtype)
    out, cache = _forward(tensors, x)
    err = wrapped_error(out, targets).astype(dtype)
    n = x.shape[0]
    loss = float(np.mean(err.astype(float) ** 2))
    grads = _backward(tensors, cache, (2.0 * err / n).astype(dtype))
    return loss, grads


@dataclass
class TrainingSample:
    patch: np.ndarray
    target: float


def net_train(samples, epochs, learning_rate, rng_seed, batch_size=32):
    """Mini-batch SGD on the wrapped squared angular loss.

    Returns ``(weights, loss_trace)`` where ``loss_trace[e]`` is the mean
    batch loss seen during epoch ``e``.
    """
    if not samples:
        raise InvalidParameterError("training needs at least one sample")
    # zero is allowed and leaves the initial weights untouched
    if not learning_rate >= 0:
        raise InvalidParameterError("learning rate must be non-negative")
    if epochs < 0:
        raise InvalidParameterError("epochs must be non-negative")
    rng = np.random.default_rng(rng_seed)
    x = np.stack([np.asarray(s.patch, dtype=np.float32) for s in samples])
    y = np.array([s.target for s in samples], dtype=np.float32)
    tensors = [t.copy() for t in NetworkWeights.he_uniform(rng).tensors]
    for t in tensors:
        t.setflags(write=True)
    trace = []
    lr = np.float32(learning_rate)
    for epoch in range(epochs):
        order = rng.permutation(len(samples))
        total = 0.0
        for start in range(0, len(order), batch_size):
            b = order[start:start + batch_size]
            loss, grads = loss_and_grads(tensors, x[b], y[b])
            total += loss * b.size
            if lr:
                for t, g in zip(tensors, grads):
                    t -= lr * g
        trace.append(total / len(samples))
        log.debug("epoch %d loss %.4f", epoch, trace[-1])
    return NetworkWeights(tuple(tensors)), trace


# --- training data -------------------------------------------------------------

def _chain_headings(chain):
    pts = np.asarray(chain, dtype=float)
    d = np.roll(pts, -1, axis=0) - pts  # step i -> i+1
    return np.degrees(np.arctan2(d[:, 1], d[:, 0]))


def gen_training_set(cases, walks_per_case, rng, jitter=22.5):
    """Samples from walks along each ground-truth contour chain.

    The first walk of every case follows the chain exactly in both
    directions; further walks perturb the heading by up to ``jitter``
    degrees so the network also sees off-axis frames. Cases whose contour is
    not a simple closed chain are skipped; the count is returned.
    """
    samples = []
    skipped = 0
    for case in cases:
        image, soft, _, contour = case[:4]
        chain = imaging.trace_chain(contour)
        if not imaging.is_simple_closed_chain(chain, contour):
            skipped += 1
            log.warning("skipping case: ground-truth contour is not a simple closed chain")
            continue
        stack = image_stack(image, soft)
        for walk in range(max(1, walks_per_case)):
            for ordered in (chain, chain[::-1]):
                pts = np.asarray(ordered)
                step_dir = _chain_headings(ordered)       # direction cur -> next
                heading = np.roll(step_dir, 1)            # direction prev -> cur
                if walk:
                    heading = heading + rng.uniform(-jitter, jitter, heading.size)
                target = imaging.wrap_deg(heading - step_dir)
                patches = extract_patches(stack, pts, heading).astype(np.float32)
                samples.extend(TrainingSample(p, float(t)) for p, t in zip(patches, target))
    if skipped:
        log.warning("%d case(s) skipped", skipped)
    return samples, skipped


# --- weight files --------------------------------------------------------------

MAGIC = b"WTL2"
FORMAT_VERSION = 1


def save_weights(weights, path):
    """Binary format: magic, u32 version, u32 count, then per tensor
    u32 rank, u32 dims..., float32 little-endian row-major payload."""
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(weights.tensors))]
    for t in weights.tensors:
        parts.append(struct.pack("<I", t.ndim))
        parts.append(struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(parts))
    return path


def load_weights(path):
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {data[:4]!r}")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedPayloadError(f"{path}: file ends early")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<II", take(8))
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    tensors = []
    for _ in range(count):
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims)
        tensors.append(arr.astype(np.float32))
    if pos != len(data):
        raise InvalidWeightsError(f"{path}: {len(data) - pos} trailing bytes")
    return NetworkWeights(tuple(tensors))
