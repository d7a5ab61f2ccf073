"""End-to-end pipeline: soft map -> seeds -> swarm -> binarization -> mask."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import binarize, imaging, nms, softcontour
from .errors import InvalidParameterError, NoClosedContourError, NoSeedsError, NotClosedError
from .tracking import RefinedContour, SwarmConfig, SwarmStats, run_swarm

PREDICTORS = ("analytic", "network")
SOFT_SOURCES = ("file", "synthetic", "fallback")
_SWARM_KEYS = {f.name for f in fields(SwarmConfig)}


@dataclass
class PipelineConfig:
    swarm: SwarmConfig = field(default_factory=SwarmConfig)
    predictor: str = "analytic"
    weights: str | None = None
    back_cone: float = 90.0
    tau_seed: float = nms.DEFAULT_TAU_SEED
    max_seeds: int = nms.DEFAULT_MAX_SEEDS
    sigma: float = binarize.GRADIENT_SIGMA
    max_len: int = binarize.DEFAULT_MAX_LEN
    tau_region: float = binarize.DEFAULT_TAU_REGION
    soft_source: str = "file"
    workers: int = 1

    def validate(self):
        if self.predictor not in PREDICTORS:
            raise InvalidParameterError(f"predictor must be one of {PREDICTORS}")
        if self.soft_source not in SOFT_SOURCES:
            raise InvalidParameterError(f"soft_source must be one of {SOFT_SOURCES}")
        if self.predictor == "network":
            if not self.weights:
                raise InvalidParameterError("network predictor needs a weights file")
            if not Path(self.weights).is_file():
                raise InvalidParameterError(f"weights file not found: {self.weights}")
        if not 0 < self.tau_seed < 1:
            raise InvalidParameterError("tau_seed must be in (0, 1)")
        if self.max_seeds < 1 or self.max_len < 1 or self.sigma <= 0:
            raise InvalidParameterError("max_seeds, max_len and sigma must be positive")
        if not 0 < self.tau_region < 1:
            raise InvalidParameterError("tau_region must be in (0, 1)")
        self.swarm.validate()
        return self

    def to_dict(self):
        d = {k: v for k, v in asdict(self).items() if k != "swarm"}
        d.update(asdict(self.swarm))
        d["step_length_probs"] = list(self.swarm.step_length_probs)
        return d

    @classmethod
    def from_dict(cls, d):
        """Build from flat keys; swarm settings sit beside pipeline settings."""
        d = dict(d)
        known = {f.name for f in fields(cls)} - {"swarm"}
        unknown = set(d) - known - _SWARM_KEYS
        if unknown:
            raise InvalidParameterError(f"unknown config keys: {sorted(unknown)}")
        swarm = {k: d.pop(k) for k in list(d) if k in _SWARM_KEYS}
        if "step_length_probs" in swarm:
            swarm["step_length_probs"] = tuple(swarm["step_length_probs"])
        return cls(swarm=SwarmConfig(**swarm), **d).validate()

    @classmethod
    def from_json(cls, path):
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise InvalidParameterError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(data)

    def make_predictor(self):
        from .predictor import AnalyticPredictor, NetworkPredictor, load_weights
        if self.predictor == "network":
            return NetworkPredictor(load_weights(self.weights))
        return AnalyticPredictor(tau_dead=self.swarm.tau_dead, back_cone=self.back_cone)


@dataclass
class PipelineOutput:
    soft: np.ndarray
    seeds: list
    refined: RefinedContour
    closure: binarize.ClosureResult | None
    mask: np.ndarray | None
    stats: SwarmStats
    timings: dict = field(default_factory=dict)

    @property
    def open_shape(self):
        return self.closure is None

    def stats_dict(self):
        """Deterministic run summary (timings are kept apart)."""
        d = {"swarm": self.stats.to_dict(), "seeds": len(self.seeds),
             "open_shape": self.open_shape}
        if self.closure is not None:
            d["closure"] = self.closure.summary()
        return d


def fill_mask(contour):
    """Contour plus its largest enclosed interior. Raises NotClosedError."""
    contour = np.asarray(contour, dtype=bool)
    interior = imaging.enclosed_region(contour)
    if not interior.any():
        raise NotClosedError("contour encloses no region")
    labels, areas = imaging.connected_components(interior, 4)
    return contour | (labels == int(np.argmax(areas)) + 1)


def binarize_and_fill(refined, config):
    """Binarization and filling on a refined map; (closure, mask) or (None, None)."""
    try:
        closure = binarize.binarize_contour(refined, config.max_len, config.tau_region, config.sigma)
    except NoClosedContourError:
        return None, None
    return closure, fill_mask(closure.contour)


def segment_image(image, config=None, soft=None, predictor=None):
    """Run the whole pipeline on one image.

    ``soft`` is the detector output; without it the fallback edge map is
    used. NoSeedsError and EmptyRefinedMapError propagate; a contour that
    never closes yields an output with ``closure`` and ``mask`` set to None.
    """
    config = (config or PipelineConfig()).validate()
    image = imaging.as_image(image)
    predictor = predictor or config.make_predictor()
    timings = {}
    clock = time.perf_counter()
    start = clock

    def lap(name):
        nonlocal clock
        now = time.perf_counter()
        timings[name] = now - clock
        clock = now

    if soft is None or config.soft_source == "fallback":
        soft = softcontour.fallback_edge_map(image)
    soft = imaging.as_raster(soft, "soft")
    if soft.shape != image.shape[:2]:
        raise InvalidParameterError("soft map and image sizes differ")
    lap("soft")
    seeds = nms.select_seeds(nms.nms_thin(soft), config.tau_seed, config.max_seeds)
    if not seeds:
        raise NoSeedsError("no soft-contour pixel reaches tau_seed")
    lap("nms")
    refined, stats = run_swarm(image, soft, seeds, config.swarm, predictor, config.workers)
    # stored as 8-bit so later stages rerun bit-exactly from the saved PNG
    refined = RefinedContour(imaging.quantize8(refined.values), refined.visits)
    lap("swarm")
    closure, mask = binarize_and_fill(refined.values, config)
    lap("binarize")
    timings["total"] = time.perf_counter() - start
    return PipelineOutput(soft, seeds, refined, closure, mask, stats, timings)
