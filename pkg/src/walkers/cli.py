"""Command-line entry point: ``walkers {synth,segment,train,eval}``.

Exit codes: 0 success, 2 error, 3 open shape (segment only).
Config precedence: built-in defaults < ``--config`` JSON < explicit flags.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, evalkit, imaging, softcontour
from .errors import WalkersError
from .segment import PipelineConfig, segment_image

log = logging.getLogger("walkers")

EXIT_OK, EXIT_ERROR, EXIT_OPEN = 0, 2, 3
CASE_FILES = ("image.png", "soft.png", "gt_mask.png", "gt_contour.png")


def _write_json(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _manifest(args, inputs, config=None):
    return {
        "tool": "walkers",
        "version": __version__,
        "command": args.command,
        "config_file": getattr(args, "config", None),
        "config": config,
        "inputs": [str(p) for p in inputs],
        "out": str(args.out),
        "seed": args.seed,
    }


# --- synth ---------------------------------------------------------------------

def cmd_synth(args):
    rng = np.random.default_rng(args.seed)
    base = None
    if args.spec:
        base = softcontour.SynthSpec.from_json(Path(args.spec).read_text())
        base.validate()
    out = Path(args.out)
    names = []
    for i in range(args.count):
        if base is not None:
            spec = base
        else:
            spec = softcontour.random_spec(
                rng, shape=args.shape, width=args.width, height=args.height,
                blur_sigma=args.blur, noise_sigma=args.noise, gap_residual=args.gap_residual,
                gap_count=args.gaps, gap_length=args.gap_length, distractors=args.distractors)
        case = softcontour.synth_case(spec, int(rng.integers(2**31)))
        name = f"case_{i:04d}"
        d = out / name
        for fname, arr in zip(CASE_FILES, case):
            imaging.save_png(arr, d / fname)
        (d / "spec.json").write_text(spec.to_json() + "\n")
        names.append(name)
    _write_json(out / "manifest.json", _manifest(args, names))
    print(f"wrote {len(names)} cases to {out}")
    return EXIT_OK


# --- segment -------------------------------------------------------------------

def load_config(args):
    """Defaults, then the config file, then flags given on the command line."""
    data = {}
    if args.config:
        data = PipelineConfig.from_json(args.config).to_dict()
    if args.seed is not None:
        data["rng_seed"] = args.seed
    for flag in ("predictor", "weights", "workers"):
        value = getattr(args, flag, None)
        if value is not None:
            data[flag] = value
    return PipelineConfig.from_dict(data)


def _load_input(path, soft_path=None):
    """(stem, image, soft or None, gt_mask or None) for an image file or case dir."""
    path = Path(path)
    gt = None
    if path.is_dir():
        image = imaging.load_png(path / "image.png")
        soft = imaging.load_png(path / "soft.png")
        if (path / "gt_mask.png").exists():
            gt = imaging.load_png(path / "gt_mask.png") >= 0.5
        stem = path.name
    else:
        image = imaging.load_png(path)
        soft = imaging.load_png(soft_path) if soft_path else None
        stem = path.stem
    if image.ndim == 2:
        image = softcontour.ir_to_multichannel(image)
    if soft is not None and soft.ndim == 3:
        soft = soft.mean(axis=2)
    return stem, image, soft, gt


def overlay(image, mask, contour=None, alpha=0.4):
    """Mask alpha-blended in red onto the image; contour drawn in green."""
    out = np.array(image, dtype=float)
    if mask is not None:
        out[mask] = (1 - alpha) * out[mask] + alpha * np.array([1.0, 0.0, 0.0])
    if contour is not None:
        out[contour] = (0.0, 1.0, 0.0)
    return out


def write_outputs(out_dir, image, result):
    out_dir = Path(out_dir)
    imaging.save_png(result.refined.values, out_dir / "refined.png")
    contour = result.closure.contour if result.closure is not None else None
    if contour is not None:
        imaging.save_png(contour, out_dir / "contour.png")
        imaging.save_png(result.mask, out_dir / "mask.png")
    _write_json(out_dir / "stats.json", result.stats_dict())
    _write_json(out_dir / "timings.json", result.timings)
    imaging.save_png(overlay(image, result.mask, contour), out_dir / "overlay.png")


def cmd_segment(args):
    config = load_config(args)
    if args.soft and len(args.inputs) != 1:
        raise WalkersError("--soft applies to a single input image")
    predictor = config.make_predictor()
    out = Path(args.out)
    status = EXIT_OK
    for path in args.inputs:
        stem, image, soft, _ = _load_input(path, args.soft)
        result = segment_image(image, config, soft=soft, predictor=predictor)
        write_outputs(out / stem, image, result)
        if result.open_shape:
            status = EXIT_OPEN
            print(f"{stem}: open shape")
        else:
            print(f"{stem}: closed at t*={result.closure.threshold:.4f}, "
                  f"mask area {int(result.mask.sum())}")
    _write_json(out / "manifest.json", _manifest(args, args.inputs, config.to_dict()))
    return status


# --- train ---------------------------------------------------------------------

def load_cases(cases_dir):
    dirs = sorted(p for p in Path(cases_dir).iterdir() if (p / "image.png").exists())
    if not dirs:
        raise WalkersError(f"no case directories under {cases_dir}")
    cases = []
    for d in dirs:
        image, soft, gt_mask, gt_contour = (imaging.load_png(d / f) for f in CASE_FILES)
        cases.append(softcontour.SynthCase(image, soft, gt_mask >= 0.5, gt_contour >= 0.5))
    return cases


def cmd_train(args):
    from .predictor import gen_training_set, net_train, save_weights

    cases = load_cases(args.cases)
    rng = np.random.default_rng(args.seed)
    samples, skipped = gen_training_set(cases, args.walks, rng)
    if not samples:
        raise WalkersError("no usable training samples")
    weights, trace = net_train(samples, args.epochs, args.lr, args.seed, args.batch_size)
    out = Path(args.out)
    save_weights(weights, out)
    loss_path = out.with_suffix(".loss.csv")
    with loss_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss"])
        writer.writerows([e, f"{v:.6f}"] for e, v in enumerate(trace))
    _write_json(out.with_suffix(".manifest.json"), _manifest(args, [args.cases], {
        "epochs": args.epochs, "lr": args.lr, "walks": args.walks,
        "batch_size": args.batch_size, "samples": len(samples), "skipped_cases": skipped}))
    print(f"trained on {len(samples)} samples ({skipped} cases skipped); "
          f"final loss {trace[-1] if trace else float('nan'):.3f}; weights -> {out}")
    return EXIT_OK


# --- eval ----------------------------------------------------------------------

def cmd_eval(args):
    rows = evalkit.read_manifest(args.manifest)
    report = evalkit.batch_eval(rows, args.policy)
    report.to_csv(args.out)
    for rec in report.errors:
        print(f"error: {rec.image_id}: {rec.error}", file=sys.stderr)
    agg = report.mean_all
    print(f"{len(report.valid)} evaluated, closed {100 * report.closed_rate:.2f}%, "
          f"mean IoU {100 * agg['iou']:.2f} -> {args.out}")
    return EXIT_ERROR if report.errors else EXIT_OK


# --- entry point ---------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="walkers", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"walkers {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic cases")
    p.add_argument("--spec", help="SynthSpec JSON used for every case (default: random specs)")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shape", choices=softcontour.SHAPES)
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--blur", type=float, default=1.5)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--gaps", type=int, default=1)
    p.add_argument("--gap-length", type=float, default=12.0)
    p.add_argument("--gap-residual", type=float, default=0.3)
    p.add_argument("--distractors", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("segment", help="segment images or synthetic case directories")
    p.add_argument("inputs", nargs="+", help="image PNGs or case directories")
    p.add_argument("--soft", help="soft contour PNG for a single input image")
    p.add_argument("--config", help="pipeline config JSON (flat keys)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int)
    p.add_argument("--predictor", choices=("analytic", "network"))
    p.add_argument("--weights")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("train", help="train the direction network on case directories")
    p.add_argument("--cases", required=True)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=2e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--walks", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--out", required=True, help="weights file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score predicted masks against ground truth")
    p.add_argument("--manifest", required=True, help="CSV with image_id,pred,gt[,seconds]")
    p.add_argument("--policy", choices=evalkit.POLICIES, default="zero-fill")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    logging.basicConfig(level=os.environ.get("WTL2_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    try:
        return args.func(args)
    except (WalkersError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
