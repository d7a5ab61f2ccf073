"""Segmentation metrics and batch evaluation reports."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imaging
from .errors import InvalidInputError, InvalidParameterError, WalkersError

log = logging.getLogger(__name__)

POLICIES = ("zero-fill", "exclude")
CSV_COLUMNS = ("image_id", "closed", "precision", "recall", "iou", "seconds")
OPEN_MARKERS = ("", "-")


def metrics(pred, gt):
    """Precision, recall and IoU of boolean masks.

    Both empty -> (1, 1, 1). An empty prediction has precision 0 (recall 0
    and IoU 0 follow), and likewise an empty ground truth has recall 0.
    """
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    n_pred, n_gt = int(pred.sum()), int(gt.sum())
    if n_pred == 0 and n_gt == 0:
        return 1.0, 1.0, 1.0
    inter = int((pred & gt).sum())
    union = n_pred + n_gt - inter
    precision = inter / n_pred if n_pred else 0.0
    recall = inter / n_gt if n_gt else 0.0
    return precision, recall, inter / union


def closed_shape(contour):
    """True when the contour walls off a non-empty region from the border."""
    contour = np.asarray(contour, dtype=bool)
    outside = imaging.flood_fill_from_border(contour)
    enclosed = ~outside & ~contour
    if not enclosed.any():
        return False
    # every 4-neighbour of the enclosed region must be enclosed or contour
    padded = np.pad(enclosed, 1)
    ring = np.zeros_like(padded)
    for axis in (0, 1):
        for shift in (-1, 1):
            ring |= np.roll(padded, shift, axis=axis)
    ring = ring[1:-1, 1:-1] & ~enclosed
    return bool((contour | ~ring).all())


@dataclass
class EvalRecord:
    image_id: str
    closed: bool
    precision: float = 0.0
    recall: float = 0.0
    iou: float = 0.0
    seconds: float | None = None
    error: str | None = None


@dataclass
class Report:
    records: list
    policy: str = "zero-fill"
    mean_all: dict = field(default_factory=dict)
    mean_closed: dict = field(default_factory=dict)

    @property
    def errors(self):
        return [r for r in self.records if r.error]

    @property
    def valid(self):
        return [r for r in self.records if not r.error]

    @property
    def closed_rate(self):
        valid = self.valid
        return sum(r.closed for r in valid) / len(valid) if valid else 0.0

    def to_csv(self, path=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)

        def pct(v):
            return f"{100.0 * v:.2f}"

        def secs(v):
            return "" if v is None else f"{v:.3f}"

        for r in self.valid:
            writer.writerow([r.image_id, int(r.closed), pct(r.precision), pct(r.recall),
                             pct(r.iou), secs(r.seconds)])
        for name, agg in (("mean_all", self.mean_all), ("mean_closed", self.mean_closed)):
            writer.writerow([name, pct(agg.get("closed", 0.0)), pct(agg.get("precision", 0.0)),
                             pct(agg.get("recall", 0.0)), pct(agg.get("iou", 0.0)),
                             secs(agg.get("seconds"))])
        text = buf.getvalue()
        if path is not None:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            Path(path).write_text(text)
        return text


def _mean(records):
    if not records:
        return {"closed": 0.0, "precision": 0.0, "recall": 0.0, "iou": 0.0, "seconds": None}
    secs = [r.seconds for r in records if r.seconds is not None]
    return {
        "closed": float(np.mean([r.closed for r in records])),
        "precision": float(np.mean([r.precision for r in records])),
        "recall": float(np.mean([r.recall for r in records])),
        "iou": float(np.mean([r.iou for r in records])),
        "seconds": float(np.mean(secs)) if secs else None,
    }


def summarize(records, policy="zero-fill"):
    """Aggregate records into a Report; errored records never count."""
    if policy not in POLICIES:
        raise InvalidParameterError(f"policy must be one of {POLICIES}")
    report = Report(list(records), policy)
    valid = report.valid
    closed = [r for r in valid if r.closed]
    report.mean_all = _mean(valid if policy == "zero-fill" else closed)
    if policy == "zero-fill" and valid:
        report.mean_all["closed"] = report.closed_rate
    report.mean_closed = _mean(closed)
    return report


def _load_mask(path):
    arr = imaging.load_png(path)
    if arr.ndim == 3:
        arr = arr.max(axis=2)
    return arr >= 0.5


def evaluate_pair(pred_path, gt_path, image_id=None, seconds=None):
    """One EvalRecord; a missing/empty prediction counts as an open shape."""
    image_id = image_id or Path(gt_path).stem
    try:
        gt = _load_mask(gt_path)
        if pred_path is None or str(pred_path).strip() in OPEN_MARKERS:
            pred = None
        else:
            pred = _load_mask(pred_path)
            if pred.shape != gt.shape:
                raise InvalidInputError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    except (WalkersError, OSError) as exc:
        return EvalRecord(image_id, False, seconds=seconds, error=f"{type(exc).__name__}: {exc}")
    if pred is None or not pred.any():
        return EvalRecord(image_id, False, seconds=seconds)
    p, r, iou = metrics(pred, gt)
    return EvalRecord(image_id, True, p, r, iou, seconds)


def batch_eval(pairs, policy="zero-fill"):
    """Evaluate ``(pred_path, gt_path[, image_id[, seconds]])`` tuples."""
    if policy not in POLICIES:
        raise InvalidParameterError(f"policy must be one of {POLICIES}")
    pairs = list(pairs)
    if not pairs:
        raise InvalidInputError("nothing to evaluate")
    records = []
    for item in pairs:
        rec = evaluate_pair(*item)
        if rec.error:
            log.error("%s: %s", rec.image_id, rec.error)
        records.append(rec)
    return summarize(records, policy)


def read_manifest(path):
    """Rows of a CSV manifest with columns image_id, pred, gt[, seconds].

    Relative paths resolve against the manifest's directory; an empty or "-"
    pred marks an open shape.
    """
    path = Path(path)
    base = path.parent
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"image_id", "pred", "gt"} - set(reader.fieldnames or ())
        if missing:
            raise InvalidInputError(f"{path}: manifest lacks columns {sorted(missing)}")
        rows = []
        for row in reader:
            pred = (row["pred"] or "").strip()
            pred = pred if pred in OPEN_MARKERS else str(base / pred)
            sec = (row.get("seconds") or "").strip()
            rows.append((pred, str(base / row["gt"].strip()), row["image_id"],
                         float(sec) if sec else None))
    return rows
